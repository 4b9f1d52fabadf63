"""
Wide reconstruction: every target layer becomes a pair of frozen random layers whose
normalization parameters are solved so the pair computes the target's affine map.

The odd layer's shift is large enough that its ReLU acts as the identity on the
bounded input domain; its scale solves W_even diag(gamma) W_odd = diag(scale*) W*,
a Khatri-Rao system that is square (and full rank with probability one) when the
hidden width is out_dim * in_dim.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from normrecon.constants import (
    DEFAULT_WORKERS,
    LINEARIZATION_MARGIN,
    SOLVER_TOLERANCE,
)
from normrecon.errors import RankExceededError, ShapeMismatchError, SystemSingularError
from normrecon.helpers import SeedLike, spawn_generators
from normrecon.models.network import (
    FrozenWideStack,
    LayerPairSolution,
    TargetLayer,
    TargetNetwork,
    WidePair,
)
from normrecon.models.report import LayerReport, ReconstructionReport
from normrecon.models.sparse import SparseMask
from normrecon.models.tensor import Distribution, SolveClassification, SolveOutcome
from normrecon.services import tensor_core
from normrecon.services.netmodel import (
    propagate_bound,
    sample_frozen_weight,
    sample_norm_stats,
    unfold_norm,
)
from normrecon.services.verify import verify_equivalence

logger = logging.getLogger(__name__)


def solve_diagonal_system(c, b, w, tol: float = SOLVER_TOLERANCE) -> SolveOutcome:
    """
    Solve c @ diag(x) @ b = w for x through (c * b^T) x = vec(w).

    vec is the row-major flattening, which matches scipy's Khatri-Rao row order.
    Square systems go through solve_square; rank-deficient or non-square systems fall
    back to the minimum-norm pseudo-inverse and are flagged.
    """
    c, b, w = tensor_core.as_matrix(c), tensor_core.as_matrix(b), tensor_core.as_matrix(w)
    if b.shape[0] != c.shape[1] or w.shape != (c.shape[0], b.shape[1]):
        raise ShapeMismatchError(
            f"Diagonal system needs c (n x p), b (p x m), w (n x m); got {c.shape}, {b.shape}, {w.shape}"
        )
    system = tensor_core.khatri_rao(c, b.T)
    rhs = w.ravel()

    if system.shape[0] == system.shape[1]:
        outcome = tensor_core.solve_square(system, rhs, tol)
        if outcome.classification is SolveClassification.UNIQUE:
            return outcome
        logger.warning(
            f"[WIDE] Square Khatri-Rao system is {outcome.classification.value} "
            f"(rank {outcome.rank}/{system.shape[0]}); using the pseudo-inverse"
        )
        x = outcome.estimate
        return SolveOutcome(
            outcome.classification,
            outcome.solution,
            float(np.max(np.abs(system @ x - rhs))),
            outcome.condition_estimate,
            outcome.rank,
            pseudo_inverse=True,
            least_squares=x,
        )

    s = tensor_core.singular_values(system)
    rank = int(np.sum(s > tensor_core.rank_tolerance(s, system.shape)))
    augmented_rank = tensor_core.numerical_rank(np.column_stack([system, rhs]))
    x = tensor_core.pinv_solve(system, rhs)
    residual = float(np.max(np.abs(system @ x - rhs))) if rhs.size else 0.0
    if augmented_rank > rank:
        classification, solution = SolveClassification.NO_SOLUTION, None
    elif rank == system.shape[1]:
        classification, solution = SolveClassification.UNIQUE, x
    else:
        classification, solution = SolveClassification.INFINITE, x
    return SolveOutcome(
        classification,
        solution,
        residual,
        tensor_core.condition_estimate(s),
        rank,
        pseudo_inverse=True,
        least_squares=x,
    )


def linearize_shift(gamma, w, input_radius: float, margin: float = LINEARIZATION_MARGIN) -> np.ndarray:
    """
    Shift that keeps gamma_i <w_i, x> + beta_i >= margin for every ||x|| <= input_radius.

    By Cauchy-Schwarz, beta_i = |gamma_i| * ||w_i||_2 * input_radius + margin suffices.
    """
    if input_radius < 0.0:
        raise ValueError(f"input_radius must be nonnegative, got {input_radius}")
    if margin <= 0.0:
        raise ValueError(f"margin must be positive, got {margin}")
    gamma = np.asarray(gamma, dtype=np.float64)
    row_norms = np.linalg.norm(tensor_core.as_matrix(w), axis=1)
    return np.abs(gamma) * row_norms * input_radius + margin


def construct_layer_pair(
    target: TargetLayer,
    w_odd,
    w_even,
    input_radius: float,
    margin: float = LINEARIZATION_MARGIN,
    allow_pseudo_inverse: bool = False,
    layer: int = 0,
) -> LayerPairSolution:
    """
    Folded normalization parameters making the pair realize x -> diag(scale*) W* x + shift*.

    Raises:
        SystemSingularError: the Khatri-Rao system is not uniquely solvable and
            ``allow_pseudo_inverse`` is False.
    """
    w_odd, w_even = tensor_core.as_matrix(w_odd), tensor_core.as_matrix(w_even)
    if w_odd.shape[1] != target.in_dim or w_even.shape[0] != target.out_dim:
        raise ShapeMismatchError(
            f"Frozen pair {w_odd.shape}/{w_even.shape} does not fit a {target.out_dim}x{target.in_dim} target"
        )

    outcome = solve_diagonal_system(w_even, w_odd, target.linear)
    if outcome.classification is not SolveClassification.UNIQUE or outcome.pseudo_inverse:
        if not allow_pseudo_inverse:
            raise SystemSingularError(layer, outcome.condition_estimate)
        logger.warning(
            f"[WIDE] Layer {layer}: {outcome.classification.value} system solved by pseudo-inverse "
            f"(residual {outcome.residual:.3e})"
        )

    gamma_odd = outcome.estimate
    beta_odd = linearize_shift(gamma_odd, w_odd, input_radius, margin)
    gamma_even = np.ones(target.out_dim)
    beta_even = target.shift - w_even @ beta_odd

    certified = beta_odd - np.abs(gamma_odd) * np.linalg.norm(w_odd, axis=1) * input_radius
    return LayerPairSolution(
        gamma_odd=gamma_odd,
        beta_odd=beta_odd,
        gamma_even=gamma_even,
        beta_even=beta_even,
        outcome=outcome,
        certified_margin=float(certified.min(initial=margin)),
    )


@dataclass(frozen=True)
class PairPlan:
    """One pair to build: the affine map it must realize, its hidden width and input radius."""

    target: TargetLayer
    hidden: int
    input_radius: float


@dataclass(frozen=True)
class _FrozenPair:
    w_odd: np.ndarray
    w_even: np.ndarray
    mask_odd: SparseMask | None
    mask_even: SparseMask | None


def _sample_pairs(
    plans: list[PairPlan],
    seed: SeedLike,
    distribution: Distribution,
    mask_p: float | None,
):
    generators = spawn_generators(seed, "weights", "norms", "masks")
    frozen, stats = [], []
    for plan in plans:
        w_odd = sample_frozen_weight(generators["weights"], (plan.hidden, plan.target.in_dim), distribution)
        w_even = sample_frozen_weight(generators["weights"], (plan.target.out_dim, plan.hidden), distribution)
        mask_odd = mask_even = None
        if mask_p is not None:
            mask_odd = SparseMask.sample(w_odd.shape, mask_p, generators["masks"])
            mask_even = SparseMask.sample(w_even.shape, mask_p, generators["masks"])
            w_odd = tensor_core.hadamard(w_odd, mask_odd.as_matrix())
            w_even = tensor_core.hadamard(w_even, mask_even.as_matrix())
        frozen.append(_FrozenPair(w_odd, w_even, mask_odd, mask_even))
        stats.append(
            (
                sample_norm_stats(generators["norms"], plan.hidden),
                sample_norm_stats(generators["norms"], plan.target.out_dim),
            )
        )
    return frozen, stats


def sample_wide_stack(
    plans: list[PairPlan],
    seed: SeedLike = None,
    mask_p: float | None = None,
    distribution: Distribution = Distribution.UNIFORM,
) -> FrozenWideStack:
    """Frozen stack with sampled statistics and untouched (identity) scale and shift."""
    frozen, stats = _sample_pairs(plans, seed, distribution, mask_p)
    return FrozenWideStack(
        tuple(
            WidePair(pair.w_odd, pair.w_even, norm_odd, norm_even)
            for pair, (norm_odd, norm_even) in zip(frozen, stats)
        )
    )


def _pair_report(index: int, frozen: _FrozenPair, solution: LayerPairSolution | None, error) -> LayerReport:
    hidden = frozen.w_odd.shape[0]
    system_size = frozen.w_even.shape[0] * frozen.w_odd.shape[1]
    if solution is not None:
        outcome = solution.outcome
        report = LayerReport(
            layer=index,
            residual=outcome.residual,
            condition_estimate=outcome.condition_estimate,
            rank=outcome.rank,
            full_rank=outcome.rank == min(hidden, system_size),
            pseudo_inverse=outcome.pseudo_inverse,
            certified_margin=solution.certified_margin,
        )
    else:
        report = LayerReport(
            layer=index,
            residual=float("inf"),
            condition_estimate=error.condition_estimate,
            rank=tensor_core.numerical_rank(tensor_core.khatri_rao(frozen.w_even, frozen.w_odd.T)),
            full_rank=False,
        )
    if frozen.mask_odd is not None:
        masks = (frozen.mask_odd, frozen.mask_even)
        report.density = float(
            sum(m.bits.sum() for m in masks) / sum(m.bits.size for m in masks)
        )
        report.zero_rows = sum(m.zero_rows() for m in masks)
        report.zero_cols = sum(m.zero_cols() for m in masks)
    return report


def build_wide_stack(
    plans: list[PairPlan],
    seed: SeedLike = None,
    kind: str = "wide",
    margin: float = LINEARIZATION_MARGIN,
    allow_pseudo_inverse: bool = False,
    mask_p: float | None = None,
    distribution: Distribution = Distribution.UNIFORM,
    workers: int = DEFAULT_WORKERS,
) -> tuple[FrozenWideStack, ReconstructionReport]:
    """
    Sample frozen pairs for ``plans`` and solve their normalization parameters.

    Pairs are independent once their input radii are known, so they are solved in a
    thread pool when ``workers`` > 1. Frozen weights, normalization statistics and
    sparsity masks draw from separate named streams of ``seed``.

    Raises:
        SystemSingularError: for the first singular pair, carrying the full report.
    """
    frozen, stats = _sample_pairs(plans, seed, distribution, mask_p)

    def solve(index: int):
        try:
            solution = construct_layer_pair(
                plans[index].target,
                frozen[index].w_odd,
                frozen[index].w_even,
                plans[index].input_radius,
                margin=margin,
                allow_pseudo_inverse=allow_pseudo_inverse,
                layer=index,
            )
            return solution, None
        except SystemSingularError as e:
            return None, e

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(solve, range(len(plans))))
    else:
        results = [solve(index) for index in range(len(plans))]

    report = ReconstructionReport(
        kind=kind,
        seed=seed if isinstance(seed, int) else None,
        layers=[_pair_report(i, frozen[i], *results[i]) for i in range(len(plans))],
    )
    failures = [error for _, error in results if error is not None]
    if failures:
        failures[0].report = report
        logger.error(f"[WIDE] {len(failures)} of {len(plans)} pairs are singular ({kind})")
        raise failures[0]

    pairs = []
    for index, (solution, _) in enumerate(results):
        stats_odd, stats_even = stats[index]
        pairs.append(
            WidePair(
                w_odd=frozen[index].w_odd,
                w_even=frozen[index].w_even,
                norm_odd=unfold_norm(solution.gamma_odd, solution.beta_odd, stats_odd.mean, stats_odd.variance),
                norm_even=unfold_norm(solution.gamma_even, solution.beta_even, stats_even.mean, stats_even.variance),
            )
        )
        logger.info(
            f"[WIDE] Pair {index}: width {plans[index].hidden}, residual {solution.residual:.3e}, "
            f"cond {solution.condition_estimate:.3e}"
        )
    stack = FrozenWideStack(tuple(pairs))
    report.trainable_parameters = stack.trainable_parameters
    report.frozen_parameters = stack.frozen_parameters
    return stack, report


def wide_plans(g: TargetNetwork, input_radius: float = 1.0, widths: list[int] | None = None) -> list[PairPlan]:
    """One pair per target layer; hidden width out*in unless overridden per layer."""
    bound = propagate_bound(g, input_radius)
    plans = []
    for index, layer in enumerate(g.layers):
        hidden = layer.out_dim * layer.in_dim
        if widths is not None and index < len(widths) and widths[index] is not None:
            hidden = widths[index]
        plans.append(PairPlan(layer, hidden, bound.input_radius(index)))
    return plans


def _attach_equivalence(stack, g, report, verify_samples: int, seed: SeedLike, radius: float):
    if verify_samples > 0:
        report.equivalence = verify_equivalence(stack, g, verify_samples, seed, radius)


def construct_wide(
    g: TargetNetwork,
    seed: SeedLike = None,
    input_radius: float = 1.0,
    margin: float = LINEARIZATION_MARGIN,
    widths: list[int] | None = None,
    allow_pseudo_inverse: bool = False,
    distribution: Distribution = Distribution.UNIFORM,
    workers: int = DEFAULT_WORKERS,
    verify_samples: int = 0,
) -> tuple[FrozenWideStack, ReconstructionReport]:
    """
    Realize g with a frozen network of twice its depth by solving only normalization layers.

    Each target layer i gets a pair of hidden width out*in whose linearization uses the
    propagated activation bound at depth i.
    """
    plans = wide_plans(g, input_radius, widths)
    stack, report = build_wide_stack(
        plans,
        seed,
        kind="wide",
        margin=margin,
        allow_pseudo_inverse=allow_pseudo_inverse,
        distribution=distribution,
        workers=workers,
    )
    _attach_equivalence(stack, g, report, verify_samples, seed, input_radius)
    return stack, report


def construct_lowrank(
    g: TargetNetwork,
    r: int,
    seed: SeedLike = None,
    input_radius: float = 1.0,
    margin: float = LINEARIZATION_MARGIN,
    workers: int = DEFAULT_WORKERS,
    verify_samples: int = 0,
) -> tuple[FrozenWideStack, ReconstructionReport]:
    """
    Realize g when every diag(scale*) W* has rank at most r, with pairs of width r*in and out*r.

    Each target matrix is factored as A B (truncated SVD). The first pair realizes
    x -> B x + c with c chosen so its output stays above the linearization margin
    (the ReLU between the pairs is then the identity); the second realizes
    y -> A y + shift* - A c.

    Raises:
        RankExceededError: some target matrix has numerical rank above r.
    """
    bound = propagate_bound(g, input_radius)
    plans = []
    for index, layer in enumerate(g.layers):
        rank = tensor_core.numerical_rank(layer.linear)
        if rank > r:
            raise RankExceededError(index, rank, r)
        left, right = tensor_core.svd_factor(layer.linear, r)
        radius = bound.input_radius(index)
        lift = np.linalg.norm(right, axis=1) * radius + margin
        plans.append(PairPlan(TargetLayer(np.ones(r), right, lift), r * layer.in_dim, radius))
        inner_radius = tensor_core.operator_norm(right) * radius + float(np.linalg.norm(lift))
        plans.append(
            PairPlan(
                TargetLayer(np.ones(layer.out_dim), left, layer.shift - left @ lift),
                layer.out_dim * r,
                inner_radius,
            )
        )
    stack, report = build_wide_stack(plans, seed, kind="lowrank", margin=margin, workers=workers)
    _attach_equivalence(stack, g, report, verify_samples, seed, input_radius)
    return stack, report
