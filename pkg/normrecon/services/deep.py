"""
Deep reconstruction with skip connections: each target layer is realized by
sigma = ceil(in/k) blocks of width out*k, block i reading input chunk i through a
frozen projection.

With every intermediate ReLU linearized, the coefficient of chunk i in the layer
output is W_out (prod_{j>=i} Gamma_j W_j) A_i. Solving the blocks from the last to
the first isolates one unknown diagonal per step, each a square Khatri-Rao system.
"""

import dataclasses
import logging
import math

import numpy as np

from normrecon.constants import (
    DEEP_REDRAWS,
    EQUIVALENCE_TOLERANCE,
    LINEARIZATION_MARGIN,
    MAX_RESAMPLES,
    SOLVER_TOLERANCE,
    ZERO_SCALE_TOLERANCE,
)
from normrecon.errors import IndexOutOfRangeError, ShapeMismatchError, SystemSingularError, ZeroScaleEntryError
from normrecon.helpers import SeedLike, spawn_generators, spawn_seeds
from normrecon.models.network import (
    BlockSolution,
    SkipBlock,
    SkipBlockStack,
    SkipLayer,
    TargetLayer,
    TargetNetwork,
)
from normrecon.models.report import LayerReport, ReconstructionReport
from normrecon.models.tensor import SolveClassification
from normrecon.services import tensor_core
from normrecon.services.netmodel import (
    propagate_bound,
    sample_frozen_weight,
    sample_norm_stats,
    unfold_norm,
)
from normrecon.services.verify import verify_equivalence
from normrecon.services.wide import solve_diagonal_system

logger = logging.getLogger(__name__)

# Upper bound on the estimated rounding error one layer adds to the network output
ROUNDING_BUDGET = EQUIVALENCE_TOLERANCE / 10


def chunk_count(dim: int, k: int) -> int:
    return math.ceil(dim / k)


def subselect(x, i: int, k: int) -> np.ndarray:
    """
    Chunk i (1-based) of x: entries (i-1)k .. ik-1, zero-padded past the end of x.
    """
    x = np.asarray(x, dtype=np.float64)
    sigma = chunk_count(x.shape[-1], k)
    if not 1 <= i <= sigma:
        raise IndexOutOfRangeError(f"Chunk index {i} is outside [1, {sigma}]")
    chunk = x[..., (i - 1) * k : i * k]
    if chunk.shape[-1] < k:
        pad = [(0, 0)] * (chunk.ndim - 1) + [(0, k - chunk.shape[-1])]
        chunk = np.pad(chunk, pad)
    return chunk


def subselection_matrix(i: int, k: int, dim: int) -> np.ndarray:
    """S_i = [0 | I_k | 0] of shape k x (sigma*k), selecting chunk i (1-based)."""
    sigma = chunk_count(dim, k)
    if not 1 <= i <= sigma:
        raise IndexOutOfRangeError(f"Chunk index {i} is outside [1, {sigma}]")
    selection = np.zeros((k, sigma * k))
    selection[:, (i - 1) * k : i * k] = np.eye(k)
    return selection


def _power_of_two_scaling(magnitudes: np.ndarray) -> np.ndarray:
    """2^-round(log2 m) per entry; zero magnitudes keep scale 1."""
    scaling = np.ones_like(magnitudes)
    positive = magnitudes > 0.0
    scaling[positive] = np.exp2(-np.round(np.log2(magnitudes[positive])))
    return scaling


def solve_block(
    weight,
    projection,
    upstream_product,
    target_slice,
    layer: int = 0,
    block: int = 0,
    tol: float = SOLVER_TOLERANCE,
) -> BlockSolution:
    """
    Solve upstream_product @ diag(gamma) @ (weight @ projection) = target_slice for gamma.

    ``upstream_product`` is W_out times the already solved blocks after this one. Rows,
    columns and unknowns of the Khatri-Rao system are rescaled by powers of two before
    solving; the reported residual is that of the unscaled system.

    Raises:
        SystemSingularError: the square system is rank deficient, or its unscaled
            residual exceeds ``tol``.
    """
    weight, projection = tensor_core.as_matrix(weight), tensor_core.as_matrix(projection)
    upstream = tensor_core.as_matrix(upstream_product)
    target_slice = tensor_core.as_matrix(target_slice)
    coefficient = weight @ projection

    rows = _power_of_two_scaling(np.max(np.abs(upstream), axis=1, initial=0.0))
    cols = _power_of_two_scaling(np.max(np.abs(coefficient), axis=0, initial=0.0))
    left = rows[:, None] * upstream
    right = coefficient * cols[None, :]
    unknowns = _power_of_two_scaling(
        np.max(np.abs(left), axis=0, initial=0.0) * np.max(np.abs(right), axis=1, initial=0.0)
    )
    outcome = solve_diagonal_system(
        left * unknowns[None, :], right, rows[:, None] * target_slice * cols[None, :], tol
    )
    if outcome.classification is not SolveClassification.UNIQUE or outcome.pseudo_inverse:
        raise SystemSingularError(layer, outcome.condition_estimate, block=block)

    gamma = unknowns * outcome.solution
    residual = float(np.max(np.abs(upstream @ (gamma[:, None] * coefficient) - target_slice), initial=0.0))
    if residual > tol:
        logger.debug(f"[DEEP] Layer {layer}, block {block}: unscaled residual {residual:.3e} above {tol:.1e}")
        raise SystemSingularError(layer, outcome.condition_estimate, block=block)
    return BlockSolution(
        gamma=gamma,
        outcome=dataclasses.replace(outcome, residual=residual),
        nonzero_flag=bool(np.all(np.abs(gamma) > ZERO_SCALE_TOLERANCE)),
    )


def _embed_projection(projection: np.ndarray, index: int, k: int, padded_dim: int) -> np.ndarray:
    """A_i S_i as an (h x padded_dim) matrix."""
    embedded = np.zeros((projection.shape[0], padded_dim))
    embedded[:, index * k : (index + 1) * k] = projection
    return embedded


def _sample_skip_layer(
    target: TargetLayer,
    k: int,
    input_radius: float,
    generators: dict[str, np.random.Generator],
    margin: float,
    layer: int,
) -> tuple[SkipLayer, list[LayerReport], float]:
    """
    One draw of frozen matrices for ``target`` with its solved normalization parameters.

    Returns:
        (layer, reports, rounding estimate); the estimate bounds the forward pass's
        accumulated rounding error at the layer output.
    """
    sigma = chunk_count(target.in_dim, k)
    padded_dim = sigma * k
    width = target.out_dim * k
    linear = np.zeros((target.out_dim, padded_dim))
    linear[:, : target.in_dim] = target.linear

    weights = [sample_frozen_weight(generators["weights"], (width, width)) for _ in range(sigma)]
    projections = [sample_frozen_weight(generators["weights"], (width, k)) for _ in range(sigma)]
    output = sample_frozen_weight(generators["weights"], (target.out_dim, width))
    stats = [sample_norm_stats(generators["norms"], width) for _ in range(sigma)]

    reports: list[LayerReport] = []
    gammas: list[np.ndarray | None] = [None] * sigma
    gains = np.zeros(sigma)
    upstream = output
    for index in reversed(range(sigma)):
        gains[index] = np.max(np.sum(np.abs(upstream), axis=1))
        solution = solve_block(
            weights[index],
            projections[index],
            upstream,
            linear[:, index * k : (index + 1) * k],
            layer=layer,
            block=index,
        )
        reports.append(
            LayerReport(
                layer=layer,
                block=index,
                residual=solution.outcome.residual,
                condition_estimate=solution.outcome.condition_estimate,
                rank=solution.outcome.rank,
                full_rank=solution.outcome.rank == width,
                nonzero_scales=solution.nonzero_flag,
            )
        )
        if not solution.nonzero_flag:
            raise ZeroScaleEntryError(layer, index)
        gammas[index] = solution.gamma
        upstream = upstream @ (solution.gamma[:, None] * weights[index])

    # Linearization shifts, then the output bias through the last block's shift.
    betas = []
    linear_map = np.zeros((width, padded_dim))
    offset = np.zeros(width)
    rounding = 0.0
    for index in range(sigma):
        scaled = gammas[index][:, None] * weights[index]
        inputs_bound = (
            np.linalg.norm(projections[index], axis=1) + np.linalg.norm(linear_map, axis=1)
        ) * input_radius + np.abs(offset)
        linear_map = scaled @ (linear_map + _embed_projection(projections[index], index, k, padded_dim))
        base = scaled @ offset
        if index < sigma - 1:
            beta = np.linalg.norm(linear_map, axis=1) * input_radius - base + margin
        else:
            beta = tensor_core.pinv_solve(output, target.shift - output @ base)
        betas.append(beta)
        offset = base + beta
        magnitude = np.abs(scaled) @ inputs_bound + np.abs(beta) + np.abs(gammas[index] * stats[index].mean)
        rounding += gains[index] * float(np.max(magnitude))
    rounding *= tensor_core.EPS

    bias_residual = float(np.max(np.abs(output @ offset - target.shift), initial=0.0))
    coefficient_residual = float(np.max(np.abs(output @ linear_map - linear), initial=0.0))
    output_singular_values = tensor_core.singular_values(output)
    output_condition = tensor_core.condition_estimate(output_singular_values)
    output_rank = int(np.sum(output_singular_values > tensor_core.rank_tolerance(output_singular_values, output.shape)))
    reports.append(
        LayerReport(
            layer=layer,
            residual=max(bias_residual, coefficient_residual),
            condition_estimate=output_condition,
            rank=output_rank,
            full_rank=output_rank == target.out_dim,
            pseudo_inverse=True,
            certified_margin=margin if sigma > 1 else None,
        )
    )
    if output_rank < target.out_dim or max(bias_residual, coefficient_residual) > SOLVER_TOLERANCE:
        raise SystemSingularError(layer, output_condition)

    blocks = tuple(
        SkipBlock(
            weight=weights[index],
            projection=projections[index],
            norm=unfold_norm(gammas[index], betas[index], stats[index].mean, stats[index].variance),
        )
        for index in range(sigma)
    )
    return SkipLayer(blocks=blocks, output=output, chunk=k, in_dim=target.in_dim), reports, rounding


def construct_skip_layer(
    target: TargetLayer,
    k: int,
    input_radius: float,
    generators: dict[str, np.random.Generator],
    margin: float = LINEARIZATION_MARGIN,
    layer: int = 0,
    max_redraws: int = DEEP_REDRAWS,
) -> tuple[SkipLayer, list[LayerReport], int]:
    """
    Sample one skip-connected layer for ``target`` and solve its normalization parameters.

    Draws whose block or composite residual exceeds the solver tolerance, or whose
    rounding estimate exceeds ``ROUNDING_BUDGET``, are redrawn from the same generators.
    If no draw meets the rounding budget, the one with the smallest estimate is kept.

    Returns:
        (layer, reports, redraws)

    Raises:
        SystemSingularError: no draw within ``max_redraws`` passed the residual checks.
        ZeroScaleEntryError: a solved scale has an entry of magnitude below tolerance.
    """
    best = None
    last_error = None
    for redraw in range(max_redraws + 1):
        try:
            skip_layer, reports, rounding = _sample_skip_layer(target, k, input_radius, generators, margin, layer)
        except SystemSingularError as e:
            logger.debug(f"[DEEP] Draw {redraw} rejected: {e}")
            last_error = e
            continue
        if rounding <= ROUNDING_BUDGET:
            best = (skip_layer, reports, rounding, redraw)
            break
        logger.debug(f"[DEEP] Layer {layer}, draw {redraw}: rounding estimate {rounding:.3e}")
        if best is None or rounding < best[2]:
            best = (skip_layer, reports, rounding, redraw)
    else:
        if best is None:
            logger.error(f"[DEEP] Layer {layer}: all {max_redraws + 1} draws failed the residual checks")
            raise last_error
        logger.warning(
            f"[DEEP] Layer {layer}: no draw within rounding budget {ROUNDING_BUDGET:.1e}; "
            f"keeping draw {best[3]} (estimate {best[2]:.3e})"
        )

    skip_layer, reports, rounding, chosen = best
    logger.info(
        f"[DEEP] Layer {layer}: {skip_layer.sigma} blocks of width {skip_layer.width}, worst residual "
        f"{max(r.residual for r in reports):.3e}, rounding estimate {rounding:.3e}, draw {chosen}"
    )
    return skip_layer, reports, redraw


def construct_deep(
    g: TargetNetwork,
    k: int,
    seed: SeedLike = None,
    input_radius: float = 1.0,
    margin: float = LINEARIZATION_MARGIN,
    max_resamples: int = MAX_RESAMPLES,
    verify_samples: int = 0,
    max_redraws: int = DEEP_REDRAWS,
) -> tuple[SkipBlockStack, ReconstructionReport]:
    """
    Realize g with skip-connected blocks of width out*k, trading width for depth.

    A solved scale with a zero entry (a probability-zero event) aborts the attempt and
    resamples every frozen matrix from the next child seed; resamples are counted in
    the report. Numerically poor draws of a single layer are redrawn in place and
    counted as redraws.

    Raises:
        SystemSingularError: some layer failed the residual checks on every redraw.
        ZeroScaleEntryError: zero scales persisted through ``max_resamples`` resamples.
    """
    if not 1 <= k <= max(layer.in_dim for layer in g.layers):
        raise ShapeMismatchError(f"Chunk size {k} is outside [1, {g.input_dim}]")

    bound = propagate_bound(g, input_radius)
    attempts = spawn_seeds(seed, max_resamples + 1)
    last_error = None
    for resamples, attempt_seed in enumerate(attempts):
        generators = spawn_generators(attempt_seed, "weights", "norms")
        try:
            layers, reports, redraws = [], [], 0
            for index, target in enumerate(g.layers):
                skip_layer, layer_reports, layer_redraws = construct_skip_layer(
                    target, k, bound.input_radius(index), generators, margin, layer=index, max_redraws=max_redraws
                )
                layers.append(skip_layer)
                reports.extend(layer_reports)
                redraws += layer_redraws
        except ZeroScaleEntryError as e:
            logger.warning(f"[DEEP] {e}; resampling ({resamples + 1}/{max_resamples})")
            last_error = e
            continue

        stack = SkipBlockStack(tuple(layers), chunk=k)
        report = ReconstructionReport(
            kind="skip",
            seed=seed if isinstance(seed, int) else None,
            layers=reports,
            resamples=resamples,
            redraws=redraws,
            trainable_parameters=stack.trainable_parameters,
            frozen_parameters=stack.frozen_parameters,
        )
        if verify_samples > 0:
            report.equivalence = verify_equivalence(stack, g, verify_samples, seed, input_radius)
        return stack, report

    logger.error(f"[DEEP] Zero scale entries persisted after {max_resamples} resamples")
    raise last_error
