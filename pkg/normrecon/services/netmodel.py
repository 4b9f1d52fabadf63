import logging

import numpy as np

from normrecon.constants import (
    FROZEN_MEAN_RANGE,
    FROZEN_VARIANCE_RANGE,
    FROZEN_WEIGHT_RANGE,
    TARGET_SCALE_RANGE,
    TARGET_SHIFT_RANGE,
    TARGET_WEIGHT_RANGE,
)
from normrecon.errors import NonPositiveVarianceError, ShapeMismatchError
from normrecon.helpers import SeedLike, as_batch, relu
from normrecon.models.network import (
    FrozenWideStack,
    NormBound,
    NormParams,
    SkipBlockStack,
    SkipLayer,
    TargetLayer,
    TargetNetwork,
)
from normrecon.models.tensor import Distribution
from normrecon.services.tensor_core import as_matrix, operator_norm

logger = logging.getLogger(__name__)

Network = TargetNetwork | FrozenWideStack | SkipBlockStack


def fold_norm(layer_weight, bias, norm: NormParams) -> tuple[np.ndarray, np.ndarray]:
    """
    Fold a BN-type-2 layer gamma * (W x + b - mean) / s + beta into diag(scale) (W x + b) + shift.

    Returns:
        (scale, shift) with scale = gamma / s and shift = beta - scale * mean.
    """
    layer_weight = as_matrix(layer_weight)
    if layer_weight.shape[0] != norm.width:
        raise ShapeMismatchError(
            f"Weight has {layer_weight.shape[0]} rows, normalization width is {norm.width}"
        )
    if bias is not None and np.shape(bias) != (norm.width,):
        raise ShapeMismatchError(f"Bias must have length {norm.width}")
    if np.any(norm.variance <= 0.0):
        raise NonPositiveVarianceError("Cannot fold a normalization layer with nonpositive variance")
    scale = norm.scale / norm.variance
    return scale, norm.shift - scale * norm.mean


def unfold_norm(scale: np.ndarray, shift: np.ndarray, mean: np.ndarray, variance: np.ndarray) -> NormParams:
    """Inverse of fold_norm for fixed statistics: gamma = scale * s, beta = shift + scale * mean."""
    return NormParams(scale * variance, shift + scale * mean, mean, variance)


def apply_norm_layer(weight: np.ndarray, norm: NormParams, inputs: np.ndarray) -> np.ndarray:
    scale, shift = fold_norm(weight, None, norm)
    return (inputs @ weight.T) * scale + shift


def _check_input(x: np.ndarray, dim: int) -> tuple[np.ndarray, bool]:
    batch, promoted = as_batch(x)
    if batch.shape[1] != dim:
        raise ShapeMismatchError(f"Input has dimension {batch.shape[1]}, network expects {dim}")
    return batch, promoted


def forward_target(g: TargetNetwork, x) -> np.ndarray:
    """Evaluate g on one input vector or on a batch of row vectors."""
    h, promoted = _check_input(x, g.input_dim)
    last = g.depth - 1
    for index, layer in enumerate(g.layers):
        h = (h @ layer.weight.T) * layer.scale + layer.shift
        if index < last:
            h = relu(h)
    return h[0] if promoted else h


def forward_wide(f: FrozenWideStack, x) -> np.ndarray:
    h, promoted = _check_input(x, f.input_dim)
    for layer in f.frozen_layers():
        h = apply_norm_layer(layer.weight, layer.norm, h)
        if layer.relu_after:
            h = relu(h)
    return h[0] if promoted else h


def _pad(h: np.ndarray, width: int) -> np.ndarray:
    if h.shape[1] == width:
        return h
    return np.pad(h, ((0, 0), (0, width - h.shape[1])))


def forward_skip_layer(layer: SkipLayer, h: np.ndarray) -> np.ndarray:
    """Pre-activation output W_{sigma+1} L_sigma of one skip-connected layer on a batch."""
    padded = _pad(h, layer.padded_dim)
    running = None
    for index, block in enumerate(layer.blocks):
        chunk = padded[:, index * layer.chunk : (index + 1) * layer.chunk]
        inputs = chunk @ block.projection.T
        if running is not None:
            inputs = inputs + relu(running)
        running = apply_norm_layer(block.weight, block.norm, inputs)
    return running @ layer.output.T


def forward_skip(f: SkipBlockStack, x) -> np.ndarray:
    h, promoted = _check_input(x, f.input_dim)
    last = len(f.layers) - 1
    for index, layer in enumerate(f.layers):
        h = forward_skip_layer(layer, h)
        if index < last:
            h = relu(h)
    return h[0] if promoted else h


def forward(network: Network, x) -> np.ndarray:
    if isinstance(network, TargetNetwork):
        return forward_target(network, x)
    if isinstance(network, FrozenWideStack):
        return forward_wide(network, x)
    if isinstance(network, SkipBlockStack):
        return forward_skip(network, x)
    raise TypeError(f"Unsupported network type: {type(network).__name__}")


def _normalize_operator(weight: np.ndarray) -> np.ndarray:
    return weight / max(1.0, operator_norm(weight))


def _target_layer(rng: np.random.Generator, weight: np.ndarray) -> TargetLayer:
    out_dim = weight.shape[0]
    return TargetLayer(
        scale=rng.uniform(*TARGET_SCALE_RANGE, out_dim),
        weight=_normalize_operator(weight),
        shift=rng.uniform(*TARGET_SHIFT_RANGE, out_dim),
    )


def sample_target(
    d: int,
    depth: int,
    seed: SeedLike = None,
    distribution: Distribution = Distribution.UNIFORM,
) -> TargetNetwork:
    """
    Sample a width-d target network with operator norms at most one.

    Weights are drawn from ``distribution`` and divided by their operator norm when it
    exceeds one; scales are uniform(0.5, 1.5) and shifts uniform(-0.5, 0.5).
    """
    rng = np.random.default_rng(seed)
    layers = [
        _target_layer(rng, distribution.sample(rng, (d, d), *TARGET_WEIGHT_RANGE))
        for _ in range(depth)
    ]
    return TargetNetwork(tuple(layers), d)


def sample_lowrank_target(d: int, depth: int, r: int, seed: SeedLike = None) -> TargetNetwork:
    """Like sample_target, but each weight is a product of d x r and r x d factors."""
    rng = np.random.default_rng(seed)
    layers = []
    for _ in range(depth):
        left = rng.uniform(*TARGET_WEIGHT_RANGE, (d, r))
        right = rng.uniform(*TARGET_WEIGHT_RANGE, (r, d))
        layers.append(_target_layer(rng, left @ right))
    return TargetNetwork(tuple(layers), d)


def sample_experiment_teacher(d: int, seed: SeedLike = None, depth: int = 1) -> TargetNetwork:
    """
    Teacher of the width/sparsity experiments: ``depth`` ReLU layers of width d whose
    output is the sum of the last hidden layer (a fixed all-ones output row).
    """
    hidden = sample_target(d, depth, seed)
    readout = TargetLayer(scale=np.ones(1), weight=np.ones((1, d)), shift=np.zeros(1))
    return TargetNetwork((*hidden.layers, readout), d)


def sample_frozen_weight(
    rng: np.random.Generator,
    shape: tuple[int, int],
    distribution: Distribution = Distribution.UNIFORM,
) -> np.ndarray:
    return distribution.sample(rng, shape, *FROZEN_WEIGHT_RANGE)


def sample_norm_stats(rng: np.random.Generator, width: int) -> NormParams:
    """Identity scale/shift with sampled inference-time mean and variance."""
    return NormParams(
        scale=np.ones(width),
        shift=np.zeros(width),
        mean=rng.uniform(*FROZEN_MEAN_RANGE, width),
        variance=rng.uniform(*FROZEN_VARIANCE_RANGE, width),
    )


def propagate_bound(g: TargetNetwork, input_radius: float = 1.0) -> NormBound:
    """
    Bound the activation norm after every layer for inputs with norm <= input_radius.

    radius_i = ||diag(scale_i) W_i||_op * radius_{i-1} + ||shift_i||_2; ReLU is
    nonexpansive, so the bound holds before and after each activation.
    """
    radii = [float(input_radius)]
    for layer in g.layers:
        radii.append(operator_norm(layer.linear) * radii[-1] + float(np.linalg.norm(layer.shift)))
    return NormBound(tuple(radii))
