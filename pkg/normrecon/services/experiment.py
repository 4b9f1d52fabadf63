"""
Teacher-student experiments comparing SGD on normalization parameters against the
wide construction, applied either to the true teacher or to a dense network learned
from the teacher's input/output pairs.
"""

import csv
import logging
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from normrecon.errors import ReconstructionError
from normrecon.helpers import spawn_seeds
from normrecon.models.network import FrozenWideStack, TargetNetwork
from normrecon.models.report import Algorithm, ExperimentConfig, SummaryRow, SweepRow
from normrecon.services.netmodel import forward, sample_experiment_teacher
from normrecon.services.training import gradient_gate, initialize_bn, mse, sgd_train_bn, sgd_train_dense
from normrecon.services.wide import build_wide_stack, sample_wide_stack, wide_plans

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("algorithm", "width", "sparsity", "seed", "train_mse", "test_mse", "wall_time_s")
ALGORITHM_ORDER = {algorithm: index for index, algorithm in enumerate(Algorithm)}

# Rows per forward pass when scoring a network on a full data set.
PREDICT_CHUNK = 4096


@dataclass(frozen=True)
class ExperimentData:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    @property
    def radius(self) -> float:
        """Largest input norm over both splits; the linearization radius of every construction."""
        return float(max(np.linalg.norm(self.x_train, axis=1).max(), np.linalg.norm(self.x_test, axis=1).max()))


def generate_data(teacher: TargetNetwork, n_train: int, n_test: int, seed) -> ExperimentData:
    """Standard Gaussian inputs labeled by the teacher."""
    rng = np.random.default_rng(seed)
    x_train = rng.standard_normal((n_train, teacher.input_dim))
    x_test = rng.standard_normal((n_test, teacher.input_dim))
    return ExperimentData(x_train, predict(teacher, x_train), x_test, predict(teacher, x_test))


def predict(network, x: np.ndarray) -> np.ndarray:
    return np.concatenate(
        [forward(network, x[start : start + PREDICT_CHUNK]) for start in range(0, x.shape[0], PREDICT_CHUNK)]
    )


def _score(network, data: ExperimentData) -> tuple[float, float]:
    with np.errstate(over="ignore", invalid="ignore"):
        return mse(predict(network, data.x_train), data.y_train), mse(predict(network, data.x_test), data.y_test)


@dataclass
class SeedRun:
    """Everything one seed shares across widths, sparsities and algorithms."""

    cfg: ExperimentConfig
    seed: int

    def __post_init__(self):
        teacher_seed, data_seed, self.stack_seed, dense_seed, self.sgd_seed = spawn_seeds(self.seed, 5)
        cfg = self.cfg
        self.teacher = sample_experiment_teacher(cfg.teacher_width, teacher_seed, cfg.teacher_depth)
        self.data = generate_data(self.teacher, cfg.n_train, cfg.n_test, data_seed)
        self.dense_init = sample_experiment_teacher(cfg.teacher_width, dense_seed, cfg.teacher_depth)
        self._learned: tuple[TargetNetwork | None, str | None, float] | None = None

    def learned(self) -> tuple[TargetNetwork | None, str | None, float]:
        """Dense student trained once per seed: (network or None, failure reason, seconds)."""
        if self._learned is None:
            start = time.perf_counter()
            network, result = sgd_train_dense(
                self.dense_init,
                self.data.x_train,
                self.data.y_train,
                self.cfg.dense_sgd or self.cfg.sgd,
                self.sgd_seed,
            )
            reason = "dense_diverged" if result.diverged else None
            self._learned = (None if result.diverged else network, reason, time.perf_counter() - start)
        return self._learned

    def _plans(self, g: TargetNetwork, width: int):
        return wide_plans(g, self.data.radius, [width])

    def _construct(self, g: TargetNetwork, width: int, mask_p: float | None) -> FrozenWideStack:
        stack, _ = build_wide_stack(
            self._plans(g, width),
            self.stack_seed,
            kind="experiment",
            allow_pseudo_inverse=True,
            mask_p=mask_p,
        )
        return stack

    def cell(self, algorithm: Algorithm, width: int, sparsity: float) -> SweepRow:
        mask_p = None if sparsity >= 1.0 else sparsity
        start = time.perf_counter()
        extra = 0.0
        reason = None
        train_mse = test_mse = float("nan")
        try:
            if algorithm is Algorithm.SGD_BN:
                stack = initialize_bn(sample_wide_stack(self._plans(self.teacher, width), self.stack_seed, mask_p))
                stack, result = sgd_train_bn(stack, self.data.x_train, self.data.y_train, self.cfg.sgd, self.sgd_seed)
                if result.diverged:
                    reason = "diverged"
                else:
                    train_mse, test_mse = _score(stack, self.data)
            elif algorithm is Algorithm.CONSTRUCT_FROM_TEACHER:
                train_mse, test_mse = _score(self._construct(self.teacher, width, mask_p), self.data)
            else:
                learned, reason, extra = self.learned()
                if learned is not None:
                    train_mse, test_mse = _score(self._construct(learned, width, mask_p), self.data)
        except ReconstructionError as e:
            logger.warning(f"[SWEEP] {algorithm.value} width={width} p={sparsity} seed={self.seed}: {e}")
            reason = type(e).__name__
        if reason is None and not (np.isfinite(train_mse) and np.isfinite(test_mse)):
            reason = "non_finite_output"
            train_mse = test_mse = float("nan")

        elapsed = time.perf_counter() - start + extra
        row = SweepRow(
            algorithm=algorithm,
            width=width,
            sparsity=sparsity,
            seed=self.seed,
            train_mse=train_mse,
            test_mse=test_mse,
            wall_time_s=elapsed if self.cfg.record_wall_time else 0.0,
            reason=reason,
        )
        logger.info(
            f"[SWEEP] {algorithm.value} width={width} p={sparsity} seed={self.seed}: "
            f"test mse {test_mse:.3e}" + (f" ({reason})" if reason else "")
        )
        return row

    def rows(self) -> list[SweepRow]:
        return [
            self.cell(algorithm, width, sparsity)
            for width in self.cfg.widths
            for sparsity in self.cfg.sparsity_levels
            for algorithm in self.cfg.algorithms
        ]


def sort_rows(rows: list[SweepRow]) -> list[SweepRow]:
    return sorted(rows, key=lambda r: (ALGORITHM_ORDER[r.algorithm], r.width, r.sparsity, r.seed))


def run_experiment(cfg: ExperimentConfig) -> list[SweepRow]:
    """
    Run every requested algorithm for every seed, student width and sparsity level.

    Per seed, the teacher, the data and the frozen student weights are shared by all
    algorithms, so their losses are directly comparable. Construction and training
    failures become rows with NaN losses and a reason instead of aborting the sweep.

    Raises:
        GradientCheckError: backpropagation disagrees with finite differences
            (only when ``cfg.gradient_gate`` is set).
    """
    if cfg.gradient_gate:
        gradient_gate(cfg.seeds[0])

    logger.info(
        f"[SWEEP] teacher width {cfg.teacher_width}, widths {cfg.widths}, sparsities {cfg.sparsity_levels}, "
        f"{len(cfg.seeds)} seeds, {len(cfg.algorithms)} algorithms"
    )

    def run_seed(seed: int) -> list[SweepRow]:
        return SeedRun(cfg, seed).rows()

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
            per_seed = list(executor.map(run_seed, cfg.seeds))
    else:
        per_seed = [run_seed(seed) for seed in cfg.seeds]
    return sort_rows([row for rows in per_seed for row in rows])


def _trimmed_mean(values: list[float]) -> float:
    if not values:
        return float("nan")
    values = sorted(values)
    if len(values) >= 3:
        values = values[1:-1]
    return float(np.mean(values))


def trimmed_summary(rows: list[SweepRow]) -> list[SummaryRow]:
    """
    Mean losses per (algorithm, width, sparsity) after discarding the smallest and
    largest value when at least three seeds succeeded. Failed rows only count as failures.
    """
    cells: dict[tuple, list[SweepRow]] = defaultdict(list)
    for row in rows:
        cells[(row.algorithm, row.width, row.sparsity)].append(row)

    summary = []
    for (algorithm, width, sparsity), cell in cells.items():
        ok = [row for row in cell if not row.failed]
        summary.append(
            SummaryRow(
                algorithm=algorithm,
                width=width,
                sparsity=sparsity,
                train_mse=_trimmed_mean([row.train_mse for row in ok]),
                test_mse=_trimmed_mean([row.test_mse for row in ok]),
                runs=len(cell),
                failures=len(cell) - len(ok),
            )
        )
    return sorted(summary, key=lambda s: (ALGORITHM_ORDER[s.algorithm], s.width, s.sparsity))


def _format(value: float) -> str:
    return "NaN" if np.isnan(value) else repr(float(value))


def _write_figure_data(rows: list[SweepRow], figure_dir: Path) -> list[Path]:
    summary = trimmed_summary(rows)
    algorithms = sorted({s.algorithm for s in summary}, key=ALGORITHM_ORDER.__getitem__)
    table = {(s.algorithm, s.width, s.sparsity): s.test_mse for s in summary}
    widths = sorted({s.width for s in summary})
    sparsities = sorted({s.sparsity for s in summary})
    header = " ".join(a.value for a in algorithms)

    written = []
    figure_dir.mkdir(parents=True, exist_ok=True)
    # Loss against student width, one file per sparsity level
    for sparsity in sparsities:
        path = figure_dir / f"width_p{sparsity:g}.dat"
        lines = [f"# width {header}"]
        for width in widths:
            values = [_format(table.get((a, width, sparsity), float("nan"))) for a in algorithms]
            lines.append(" ".join([str(width), *values]))
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    # Loss against sparsity, one file per width
    if len(sparsities) > 1:
        for width in widths:
            path = figure_dir / f"sparsity_w{width}.dat"
            lines = [f"# sparsity {header}"]
            for sparsity in sparsities:
                values = [_format(table.get((a, width, sparsity), float("nan"))) for a in algorithms]
                lines.append(" ".join([repr(sparsity), *values]))
            path.write_text("\n".join(lines) + "\n")
            written.append(path)
    return written


def emit_results(rows: list[SweepRow], path: str | Path, figure_dir: str | Path | None = None) -> Path:
    """
    Write rows as CSV (fixed header, deterministic order) and optionally gnuplot data
    files of trimmed test losses against width and against sparsity.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in sort_rows(rows):
            writer.writerow(
                [
                    row.algorithm.value,
                    row.width,
                    repr(float(row.sparsity)),
                    row.seed,
                    _format(row.train_mse),
                    _format(row.test_mse),
                    repr(float(row.wall_time_s)),
                ]
            )
    logger.info(f"[SWEEP] Wrote {len(rows)} rows to {path}")
    if figure_dir is not None:
        _write_figure_data(rows, Path(figure_dir))
    return path


def load_results(path: str | Path) -> list[SweepRow]:
    with Path(path).open(newline="") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"Unexpected CSV header in {path}: {reader.fieldnames}")
        return [
            SweepRow(
                algorithm=Algorithm(record["algorithm"]),
                width=int(record["width"]),
                sparsity=float(record["sparsity"]),
                seed=int(record["seed"]),
                train_mse=float(record["train_mse"]),
                test_mse=float(record["test_mse"]),
                wall_time_s=float(record["wall_time_s"]),
            )
            for record in reader
        ]
