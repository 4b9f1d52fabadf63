import logging

import numpy as np

from normrecon.constants import DEFAULT_SAMPLES
from normrecon.errors import ShapeMismatchError
from normrecon.helpers import SeedLike, sample_unit_ball
from normrecon.models.network import TargetNetwork
from normrecon.models.report import EquivalenceResult
from normrecon.services.netmodel import Network, forward, forward_target

logger = logging.getLogger(__name__)


def verify_equivalence(
    f: Network,
    g: TargetNetwork,
    samples: int = DEFAULT_SAMPLES,
    seed: SeedLike = None,
    radius: float = 1.0,
) -> EquivalenceResult:
    """
    Compare f and g on inputs drawn uniformly from the ball of the given radius.

    The per-sample error is the infinity norm of f(x) - g(x); the result holds the max
    and mean of that error over all samples.
    """
    if f.input_dim != g.input_dim:
        raise ShapeMismatchError(f"Input dimensions differ: {f.input_dim} vs {g.input_dim}")
    if f.output_dim != g.output_dim:
        raise ShapeMismatchError(f"Output dimensions differ: {f.output_dim} vs {g.output_dim}")

    rng = np.random.default_rng(seed)
    x = sample_unit_ball(rng, samples, g.input_dim, radius)
    errors = np.max(np.abs(forward(f, x) - forward_target(g, x)), axis=1)
    max_error = float(errors.max(initial=0.0))
    result = EquivalenceResult(
        samples=samples,
        max_abs_error=max_error,
        # mean of equal values can round one ulp above the max
        mean_abs_error=min(float(errors.mean()), max_error) if samples else 0.0,
        domain_radius=radius,
    )
    logger.info(
        f"[VERIFY] {samples} samples in radius {radius}: max {result.max_abs_error:.3e}, "
        f"mean {result.mean_abs_error:.3e}"
    )
    return result
