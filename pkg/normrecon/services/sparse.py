import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from normrecon.constants import (
    DEFAULT_WORKERS,
    LINEARIZATION_MARGIN,
    WILSON_Z,
)
from normrecon.errors import ShapeMismatchError, SystemSingularError
from normrecon.helpers import SeedLike, spawn_generators, spawn_seeds
from normrecon.models.network import FrozenWideStack, TargetNetwork
from normrecon.models.report import ReconstructionReport
from normrecon.models.sparse import SingularityEstimate, SparseMask
from normrecon.services import tensor_core
from normrecon.services.netmodel import sample_frozen_weight
from normrecon.services.verify import verify_equivalence
from normrecon.services.wide import build_wide_stack, wide_plans

logger = logging.getLogger(__name__)


def choose_sparsity(d: int, cbar: float) -> float:
    """
    Keep-probability p = min(1, sqrt(2 d q)) with q = cbar * log(d^2) / d^2.

    This is p = Theta(sqrt(log d / d)); cbar stands in for the unnumbered universal
    constant of the Bernoulli singularity bound.
    """
    if d < 2:
        raise ValueError(f"choose_sparsity needs d >= 2, got {d}")
    if cbar <= 0.0:
        raise ValueError(f"cbar must be positive, got {cbar}")
    q = cbar * math.log(d * d) / (d * d)
    return min(1.0, math.sqrt(2.0 * d * q))


def sparsify(w, mask: SparseMask) -> np.ndarray:
    w = tensor_core.as_matrix(w)
    if w.shape != mask.shape:
        raise ShapeMismatchError(f"Mask shape {mask.shape} does not match weight shape {w.shape}")
    return tensor_core.hadamard(w, mask.as_matrix())


def check_boolean_equivalence(p_mat, q_mat, m1: SparseMask, m2: SparseMask) -> tuple[int, int]:
    """
    Cross-check invertibility of khatri_rao(P o M1, Q o M2) against the Boolean
    determinant of the Boolean Khatri-Rao product of the masks.

    Returns:
        (det_nonzero, bool_det), each 0 or 1.
    """
    product = tensor_core.khatri_rao(sparsify(p_mat, m1), sparsify(q_mat, m2))
    if product.shape[0] != product.shape[1]:
        raise ShapeMismatchError(f"Khatri-Rao product must be square, got {product.shape}")
    det_nonzero = int(tensor_core.numerical_rank(product) == product.shape[0])
    bool_det = tensor_core.boolean_det(tensor_core.boolean_khatri_rao(m1.bits, m2.bits))
    return det_nonzero, bool_det


def construct_sparse(
    g: TargetNetwork,
    p: float,
    seed: SeedLike = None,
    input_radius: float = 1.0,
    margin: float = LINEARIZATION_MARGIN,
    workers: int = DEFAULT_WORKERS,
    verify_samples: int = 0,
    layer_failure_rate: float | None = None,
) -> tuple[FrozenWideStack, ReconstructionReport]:
    """
    Wide construction over Bernoulli(p)-sparsified frozen weights.

    The report records per pair whether the Khatri-Rao system was invertible, the
    realized mask density and the number of all-zero mask rows and columns. With the
    same seed, p = 1 reproduces construct_wide exactly. Given a per-pair singularity
    rate (e.g. from estimate_singularity_rate), the report also states the union bound
    on the probability that any pair fails.

    Raises:
        SystemSingularError: some pair's system is singular; the error carries the report.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"Sparsity p must lie in (0, 1], got {p}")
    plans = wide_plans(g, input_radius)
    try:
        stack, report = build_wide_stack(
            plans, seed, kind="sparse", margin=margin, mask_p=p, workers=workers
        )
    except SystemSingularError as e:
        e.report.failure_rate_bound = _union_bound(len(plans), layer_failure_rate)
        raise
    report.failure_rate_bound = _union_bound(len(plans), layer_failure_rate)
    zero_lines = sum((layer.zero_rows or 0) + (layer.zero_cols or 0) for layer in report.layers)
    if zero_lines:
        logger.warning(f"[SPARSE] {zero_lines} all-zero mask rows/columns at p={p}")
    if verify_samples > 0:
        report.equivalence = verify_equivalence(stack, g, verify_samples, seed, input_radius)
    return stack, report


def _union_bound(pairs: int, layer_failure_rate: float | None) -> float | None:
    if layer_failure_rate is None:
        return None
    return min(1.0, pairs * layer_failure_rate)


def wilson_interval(failures: int, trials: int, z: float = WILSON_Z) -> tuple[float, float]:
    if trials <= 0:
        raise ValueError("Wilson interval needs at least one trial")
    rate = failures / trials
    denominator = 1.0 + z * z / trials
    center = (rate + z * z / (2 * trials)) / denominator
    half = z * math.sqrt(rate * (1 - rate) / trials + z * z / (4 * trials * trials)) / denominator
    return max(0.0, center - half), min(1.0, center + half)


def _singular_trial(d: int, p: float, trial_seed: np.random.SeedSequence) -> bool:
    generators = spawn_generators(trial_seed, "weights", "masks")
    weights = generators["weights"]
    p_mat = sample_frozen_weight(weights, (d, d * d))
    q_mat = sample_frozen_weight(weights, (d, d * d))
    m1 = SparseMask.sample(p_mat.shape, p, generators["masks"])
    m2 = SparseMask.sample(q_mat.shape, p, generators["masks"])
    product = tensor_core.khatri_rao(sparsify(p_mat, m1), sparsify(q_mat, m2))
    return tensor_core.numerical_rank(product) < d * d


def estimate_singularity_rate(
    d: int,
    p: float,
    trials: int,
    seed: SeedLike = None,
    workers: int = DEFAULT_WORKERS,
) -> SingularityEstimate:
    """
    Monte-Carlo estimate of P[khatri_rao of two p-sparsified random d x d^2 matrices is singular].

    Trial i draws from the i-th spawned child of ``seed``, so results do not depend on
    ``workers``.
    """
    if trials < 1:
        raise ValueError("estimate_singularity_rate needs at least one trial")
    seeds = spawn_seeds(seed, trials)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            outcomes = list(executor.map(lambda s: _singular_trial(d, p, s), seeds))
    else:
        outcomes = [_singular_trial(d, p, s) for s in seeds]
    failures = int(sum(outcomes))
    estimate = SingularityEstimate(trials, failures, wilson_interval(failures, trials))
    logger.info(
        f"[SPARSE] d={d}, p={p:.4f}: {failures}/{trials} singular, "
        f"95% interval [{estimate.wilson_interval[0]:.4f}, {estimate.wilson_interval[1]:.4f}]"
    )
    return estimate
