"""
Minibatch SGD on mean-squared error with hand-written backpropagation.

Two trainers share one loop: ``sgd_train_bn`` moves only the scale and shift of every
normalization layer of a frozen wide stack, ``sgd_train_dense`` moves every parameter
of a target-shaped network. Both expose their loss and gradient as closures over a
flat list of parameter arrays, which is also what ``check_gradients`` perturbs.
"""

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from normrecon.errors import GradientCheckError, ShapeMismatchError
from normrecon.helpers import SeedLike, relu, spawn_seeds
from normrecon.models.network import FrozenLayer, FrozenWideStack, TargetLayer, TargetNetwork, WidePair
from normrecon.models.report import Schedule, SGDConfig, TrainingResult
from normrecon.services.netmodel import forward_target, sample_experiment_teacher
from normrecon.services.wide import sample_wide_stack, wide_plans

logger = logging.getLogger(__name__)

LossAndGrad = Callable[[np.ndarray, np.ndarray], tuple[float, list[np.ndarray]]]
Evaluate = Callable[[], tuple[float, np.ndarray]]

GRADIENT_TOLERANCE = 1e-5
GRADIENT_CHECKS = 20


def mse(prediction: np.ndarray, target: np.ndarray) -> float:
    """Mean over samples and output entries."""
    return float(np.mean((prediction - target) ** 2))


def learning_rate(cfg: SGDConfig, epoch: int) -> float:
    if cfg.schedule is Schedule.COSINE:
        return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
    if cfg.schedule is Schedule.EXPONENTIAL:
        return cfg.learning_rate * cfg.decay**epoch
    return cfg.learning_rate


def _check_data(x: np.ndarray, y: np.ndarray, input_dim: int, output_dim: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if x.ndim != 2 or x.shape[1] != input_dim:
        raise ShapeMismatchError(f"Inputs must have shape (n, {input_dim}), got {x.shape}")
    if y.shape != (x.shape[0], output_dim):
        raise ShapeMismatchError(f"Labels must have shape ({x.shape[0]}, {output_dim}), got {y.shape}")
    return x, y


# Normalization-only training


def _bn_forward(layers: list[FrozenLayer], x: np.ndarray):
    cache = []
    h = x
    for layer in layers:
        norm = layer.norm
        normalized = (h @ layer.weight.T - norm.mean) / norm.variance
        z = norm.scale * normalized + norm.shift
        cache.append((normalized, z))
        h = relu(z) if layer.relu_after else z
    return h, cache


def _bn_backward(layers: list[FrozenLayer], cache, delta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    grads = []
    for layer, (normalized, z) in zip(reversed(layers), reversed(cache)):
        if layer.relu_after:
            delta = delta * (z > 0.0)
        grads.append((np.sum(delta * normalized, axis=0), np.sum(delta, axis=0)))
        delta = (delta * (layer.norm.scale / layer.norm.variance)) @ layer.weight
    grads.reverse()
    return grads


def _relu_pattern(pairs) -> np.ndarray:
    return np.concatenate([(z > 0.0).ravel() for relu_after, z in pairs if relu_after] or [np.zeros(0, bool)])


@dataclass
class BNObjective:
    """Loss and gradient of a frozen stack with respect to the scale/shift of ``trainable`` layers."""

    layers: list[FrozenLayer]
    trainable: list[int]

    @classmethod
    def of(cls, stack: FrozenWideStack, trainable: Sequence[int] | None = None) -> "BNObjective":
        layers = list(stack.frozen_layers())
        indices = list(range(len(layers))) if trainable is None else sorted(set(trainable))
        if any(not 0 <= i < len(layers) for i in indices):
            raise ShapeMismatchError(f"Trainable layer indices must lie in [0, {len(layers)})")
        return cls(layers, indices)

    @property
    def params(self) -> list[np.ndarray]:
        return [p for i in self.trainable for p in (self.layers[i].norm.scale, self.layers[i].norm.shift)]

    def loss_and_grad(self, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
        out, cache = _bn_forward(self.layers, x)
        grads = _bn_backward(self.layers, cache, 2.0 * (out - y) / out.size)
        return mse(out, y), [g for i in self.trainable for g in grads[i]]

    def evaluator(self, x: np.ndarray, y: np.ndarray) -> Evaluate:
        def evaluate():
            out, cache = _bn_forward(self.layers, x)
            pattern = _relu_pattern((layer.relu_after, z) for layer, (_, z) in zip(self.layers, cache))
            return mse(out, y), pattern

        return evaluate


# Full-parameter training of a target-shaped network


@dataclass
class DenseObjective:
    """Mutable copies of every (scale, weight, shift) of a target-shaped network."""

    scales: list[np.ndarray]
    weights: list[np.ndarray]
    shifts: list[np.ndarray]
    input_dim: int

    @classmethod
    def of(cls, g: TargetNetwork) -> "DenseObjective":
        return cls(
            [np.array(layer.scale) for layer in g.layers],
            [np.array(layer.weight) for layer in g.layers],
            [np.array(layer.shift) for layer in g.layers],
            g.input_dim,
        )

    @property
    def params(self) -> list[np.ndarray]:
        return [p for triple in zip(self.scales, self.weights, self.shifts) for p in triple]

    def network(self) -> TargetNetwork:
        layers = tuple(TargetLayer(s, w, b) for s, w, b in zip(self.scales, self.weights, self.shifts))
        return TargetNetwork(layers, self.input_dim)

    def _forward(self, x: np.ndarray):
        cache = []
        h = x
        last = len(self.weights) - 1
        for index, (scale, weight, shift) in enumerate(zip(self.scales, self.weights, self.shifts)):
            linear = h @ weight.T
            z = linear * scale + shift
            cache.append((h, linear, z))
            h = relu(z) if index < last else z
        return h, cache

    def loss_and_grad(self, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
        out, cache = self._forward(x)
        delta = 2.0 * (out - y) / out.size
        grads = []
        last = len(self.weights) - 1
        for index in reversed(range(len(self.weights))):
            inputs, linear, z = cache[index]
            if index < last:
                delta = delta * (z > 0.0)
            scaled = delta * self.scales[index]
            grads.append((np.sum(delta * linear, axis=0), scaled.T @ inputs, np.sum(delta, axis=0)))
            delta = scaled @ self.weights[index]
        grads.reverse()
        return mse(out, y), [g for triple in grads for g in triple]

    def evaluator(self, x: np.ndarray, y: np.ndarray) -> Evaluate:
        def evaluate():
            out, cache = self._forward(x)
            last = len(cache) - 1
            pattern = _relu_pattern((index < last, z) for index, (_, _, z) in enumerate(cache))
            return mse(out, y), pattern

        return evaluate


def _sgd(
    params: list[np.ndarray],
    loss_and_grad: LossAndGrad,
    x: np.ndarray,
    y: np.ndarray,
    cfg: SGDConfig,
    seed: SeedLike,
    tag: str,
) -> TrainingResult:
    rng = np.random.default_rng(seed)
    n = x.shape[0]
    result = TrainingResult()
    for epoch in range(cfg.epochs):
        rate = learning_rate(cfg, epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_grad(x[batch], y[batch])
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                result.losses.append(float("nan"))
                result.diverged = True
                logger.warning(f"[SGD] {tag}: loss diverged in epoch {epoch} at lr {rate:.3e}")
                return result
            for param, grad in zip(params, grads):
                param -= rate * grad
            total += loss * batch.size
        result.losses.append(total / n)
        logger.debug(f"[SGD] {tag}: epoch {epoch} loss {result.losses[-1]:.6e} (lr {rate:.3e})")
    logger.info(f"[SGD] {tag}: {cfg.epochs} epochs, final loss {result.final_loss:.6e}")
    return result


def copy_stack(stack: FrozenWideStack) -> FrozenWideStack:
    """Share the frozen weights, copy every normalization layer."""
    return FrozenWideStack(
        tuple(WidePair(p.w_odd, p.w_even, p.norm_odd.copy(), p.norm_even.copy()) for p in stack.pairs)
    )


def initialize_bn(stack: FrozenWideStack) -> FrozenWideStack:
    """
    Starting point for SGD on a freshly sampled stack: every folded scale set to
    sqrt(6 / fan_in) (sqrt(3 / fan_in) before the output) and every folded shift to 0.

    With uniform(-1, 1) frozen weights this keeps activation variance roughly constant
    through the stack.
    """
    initialized = copy_stack(stack)
    for layer in initialized.frozen_layers():
        fan_in = layer.weight.shape[1]
        folded = math.sqrt((6.0 if layer.relu_after else 3.0) / fan_in)
        layer.norm.scale[:] = folded * layer.norm.variance
        layer.norm.shift[:] = folded * layer.norm.mean
    return initialized


def sgd_train_bn(
    stack: FrozenWideStack,
    x,
    y,
    cfg: SGDConfig,
    seed: SeedLike = None,
    trainable: Sequence[int] | None = None,
) -> tuple[FrozenWideStack, TrainingResult]:
    """
    Train only normalization scale and shift of a frozen stack by minibatch SGD on MSE.

    ``trainable`` restricts the update to the given layer indices in
    ``stack.frozen_layers()`` order. The input stack is left untouched.
    """
    x, y = _check_data(x, y, stack.input_dim, stack.output_dim)
    trained = copy_stack(stack)
    objective = BNObjective.of(trained, trainable)
    result = _sgd(objective.params, objective.loss_and_grad, x, y, cfg, seed, "BN")
    return trained, result


def sgd_train_dense(
    g: TargetNetwork,
    x,
    y,
    cfg: SGDConfig,
    seed: SeedLike = None,
) -> tuple[TargetNetwork, TrainingResult]:
    """Train every scale, weight and shift of a target-shaped network by minibatch SGD on MSE."""
    x, y = _check_data(x, y, g.input_dim, g.output_dim)
    objective = DenseObjective.of(g)
    result = _sgd(objective.params, objective.loss_and_grad, x, y, cfg, seed, "dense")
    if result.diverged:
        return g, result
    return objective.network(), result


def check_gradients(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    evaluate: Evaluate,
    checks: int = GRADIENT_CHECKS,
    eps: float = 1e-4,
    floor: float = 1e-4,
    seed: SeedLike = None,
) -> float:
    """
    Largest relative error between backpropagated and central-difference gradients.

    ``evaluate`` returns the loss and the ReLU activation pattern at the current
    parameter values. Entries whose +-eps perturbation flips the pattern are skipped;
    on a fixed pattern the loss is quadratic in any single parameter, so the central
    difference is exact up to rounding. The relative error is
    |analytic - numeric| / max(|analytic|, |numeric|, floor).

    Raises:
        GradientCheckError: fewer than ``checks`` entries could be checked.
    """
    rng = np.random.default_rng(seed)
    sizes = [p.size for p in params]
    offsets = np.cumsum([0, *sizes])
    _, pattern = evaluate()
    worst, checked = 0.0, 0
    for flat in rng.permutation(int(offsets[-1])):
        if checked == checks:
            break
        k = int(np.searchsorted(offsets, flat, side="right")) - 1
        position = np.unravel_index(int(flat - offsets[k]), params[k].shape)
        original = params[k][position]
        params[k][position] = original + eps
        plus, plus_pattern = evaluate()
        params[k][position] = original - eps
        minus, minus_pattern = evaluate()
        params[k][position] = original
        if not (np.array_equal(plus_pattern, pattern) and np.array_equal(minus_pattern, pattern)):
            continue
        numeric = (plus - minus) / (2.0 * eps)
        analytic = float(grads[k][position])
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor))
        checked += 1
    if checked < min(checks, int(offsets[-1])):
        raise GradientCheckError(f"Only {checked} of {checks} parameters avoided a ReLU kink")
    return worst


def gradient_gate(
    seed: SeedLike = 0,
    tolerance: float = GRADIENT_TOLERANCE,
    checks: int = GRADIENT_CHECKS,
    dim: int = 3,
    samples: int = 16,
) -> dict[str, float]:
    """
    Check both trainers' backpropagation on a small teacher before any experiment runs.

    Returns:
        Worst relative error per trainer ("bn", "dense").

    Raises:
        GradientCheckError: some relative error exceeds ``tolerance``.
    """
    teacher_seed, student_seed, stack_seed, data_seed = spawn_seeds(seed, 4)
    rng = np.random.default_rng(data_seed)
    teacher = sample_experiment_teacher(dim, teacher_seed)
    student = sample_experiment_teacher(dim, student_seed)
    x = rng.standard_normal((samples, dim))
    y = forward_target(teacher, x)

    stack = initialize_bn(sample_wide_stack(wide_plans(teacher), stack_seed))
    bn = BNObjective.of(stack)
    _, bn_grads = bn.loss_and_grad(x, y)
    dense = DenseObjective.of(student)
    _, dense_grads = dense.loss_and_grad(x, y)

    errors = {
        "bn": check_gradients(bn.params, bn_grads, bn.evaluator(x, y), checks, seed=rng),
        "dense": check_gradients(dense.params, dense_grads, dense.evaluator(x, y), checks, seed=rng),
    }
    for name, error in errors.items():
        if error > tolerance:
            logger.error(f"[SGD] Gradient check failed for {name}: relative error {error:.3e}")
            raise GradientCheckError(f"{name} gradients disagree with finite differences ({error:.3e} > {tolerance})")
    logger.info(f"[SGD] Gradient gate passed: bn {errors['bn']:.3e}, dense {errors['dense']:.3e}")
    return errors
