from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np

from normrecon.errors import NonPositiveVarianceError, ShapeMismatchError
from normrecon.models.tensor import SolveOutcome


def _freeze(array: np.ndarray) -> np.ndarray:
    if isinstance(array, np.ndarray) and array.dtype == np.float64 and not array.flags.writeable:
        return array
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass
class NormParams:
    """
    BN-type-2 parameters of one normalization layer: gamma * (z - mean) / variance + beta.

    Mean and variance are inference-time constants; only scale and shift are tunable.
    """

    scale: np.ndarray
    shift: np.ndarray
    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        self.scale = np.array(self.scale, dtype=np.float64)
        self.shift = np.array(self.shift, dtype=np.float64)
        self.mean = np.array(self.mean, dtype=np.float64)
        self.variance = np.array(self.variance, dtype=np.float64)
        width = self.scale.shape[0]
        for name in ("shift", "mean", "variance"):
            if getattr(self, name).shape != (width,):
                raise ShapeMismatchError(
                    f"NormParams.{name} has shape {getattr(self, name).shape}, expected ({width},)"
                )
        if np.any(self.variance <= 0.0):
            raise NonPositiveVarianceError("NormParams.variance must be strictly positive")

    @property
    def width(self) -> int:
        return self.scale.shape[0]

    @classmethod
    def identity(cls, width: int) -> "NormParams":
        return cls(np.ones(width), np.zeros(width), np.zeros(width), np.ones(width))

    def copy(self) -> "NormParams":
        return NormParams(self.scale.copy(), self.shift.copy(), self.mean.copy(), self.variance.copy())


@dataclass(frozen=True)
class TargetLayer:
    """Affine target layer x -> diag(scale) @ weight @ x + shift."""

    scale: np.ndarray
    weight: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "scale", _freeze(self.scale))
        object.__setattr__(self, "weight", _freeze(self.weight))
        object.__setattr__(self, "shift", _freeze(self.shift))
        if self.weight.ndim != 2:
            raise ShapeMismatchError("TargetLayer.weight must be a matrix")
        out_dim = self.weight.shape[0]
        if self.scale.shape != (out_dim,) or self.shift.shape != (out_dim,):
            raise ShapeMismatchError(
                f"TargetLayer scale/shift must have length {out_dim}, got "
                f"{self.scale.shape} and {self.shift.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def linear(self) -> np.ndarray:
        """The product diag(scale) @ weight."""
        return self.scale[:, None] * self.weight


@dataclass(frozen=True)
class TargetNetwork:
    """ReLU network alternating target layers and ReLU, with no ReLU after the last layer."""

    layers: tuple[TargetLayer, ...]
    input_dim: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ShapeMismatchError("TargetNetwork needs at least one layer")
        width = self.input_dim
        for index, layer in enumerate(self.layers):
            if layer.in_dim != width:
                raise ShapeMismatchError(
                    f"Layer {index} expects input of width {layer.in_dim}, previous width is {width}"
                )
            width = layer.out_dim

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def parameter_count(self) -> int:
        return sum(layer.weight.size + 2 * layer.out_dim for layer in self.layers)


@dataclass(frozen=True)
class FrozenLayer:
    """One frozen weight followed by its normalization layer, as seen by forwards and SGD."""

    weight: np.ndarray
    norm: NormParams
    relu_after: bool


@dataclass(frozen=True)
class WidePair:
    """Two frozen layers (width h = out * in for exact solves) realizing one target layer."""

    w_odd: np.ndarray
    w_even: np.ndarray
    norm_odd: NormParams
    norm_even: NormParams

    def __post_init__(self):
        object.__setattr__(self, "w_odd", _freeze(self.w_odd))
        object.__setattr__(self, "w_even", _freeze(self.w_even))
        hidden = self.w_odd.shape[0]
        if self.w_even.shape[1] != hidden:
            raise ShapeMismatchError(
                f"w_even has {self.w_even.shape[1]} columns, w_odd has {hidden} rows"
            )
        if self.norm_odd.width != hidden or self.norm_even.width != self.w_even.shape[0]:
            raise ShapeMismatchError("NormParams widths do not match the frozen weights")

    @property
    def in_dim(self) -> int:
        return self.w_odd.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_odd.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w_even.shape[0]


@dataclass(frozen=True)
class FrozenWideStack:
    pairs: tuple[WidePair, ...]

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        for index in range(1, len(self.pairs)):
            if self.pairs[index].in_dim != self.pairs[index - 1].out_dim:
                raise ShapeMismatchError(f"Pair {index} does not conform to pair {index - 1}")

    @property
    def input_dim(self) -> int:
        return self.pairs[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.pairs[-1].out_dim

    def frozen_layers(self) -> Iterator[FrozenLayer]:
        last = len(self.pairs) - 1
        for index, pair in enumerate(self.pairs):
            yield FrozenLayer(pair.w_odd, pair.norm_odd, relu_after=True)
            yield FrozenLayer(pair.w_even, pair.norm_even, relu_after=index < last)

    @property
    def trainable_parameters(self) -> int:
        return sum(2 * layer.norm.width for layer in self.frozen_layers())

    @property
    def frozen_parameters(self) -> int:
        return sum(layer.weight.size for layer in self.frozen_layers())


@dataclass(frozen=True)
class SkipBlock:
    weight: np.ndarray
    projection: np.ndarray
    norm: NormParams

    def __post_init__(self):
        object.__setattr__(self, "weight", _freeze(self.weight))
        object.__setattr__(self, "projection", _freeze(self.projection))
        width = self.weight.shape[0]
        if self.weight.shape != (width, width) or self.projection.shape[0] != width:
            raise ShapeMismatchError("SkipBlock weight must be square and match the projection")
        if self.norm.width != width:
            raise ShapeMismatchError("SkipBlock norm width does not match its weight")


@dataclass(frozen=True)
class SkipLayer:
    """
    Skip-connected realization of one target layer.

    The input (zero-padded to a multiple of ``chunk``) is split into sigma chunks;
    block i consumes chunk i through its projection, and ``output`` (W_{sigma+1})
    maps the last block to the layer output.
    """

    blocks: tuple[SkipBlock, ...]
    output: np.ndarray
    chunk: int
    in_dim: int

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "output", _freeze(self.output))
        if self.in_dim > self.sigma * self.chunk:
            raise ShapeMismatchError("SkipLayer has fewer chunks than its input needs")
        for block in self.blocks:
            if block.projection.shape[1] != self.chunk:
                raise ShapeMismatchError("SkipBlock projection width must equal the chunk size")

    @property
    def sigma(self) -> int:
        return len(self.blocks)

    @property
    def width(self) -> int:
        return self.output.shape[1]

    @property
    def out_dim(self) -> int:
        return self.output.shape[0]

    @property
    def padded_dim(self) -> int:
        return self.sigma * self.chunk


@dataclass(frozen=True)
class SkipBlockStack:
    layers: tuple[SkipLayer, ...]
    chunk: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def trainable_parameters(self) -> int:
        return sum(2 * block.norm.width for layer in self.layers for block in layer.blocks)

    @property
    def frozen_parameters(self) -> int:
        return sum(
            layer.output.size
            + sum(block.weight.size + block.projection.size for block in layer.blocks)
            for layer in self.layers
        )


@dataclass(frozen=True)
class NormBound:
    """radii[0] bounds the network input; radii[i] bounds the output of layer i."""

    radii: tuple[float, ...]

    def input_radius(self, layer: int) -> float:
        return self.radii[layer]


@dataclass(frozen=True)
class LayerPairSolution:
    """Folded normalization parameters of one wide pair."""

    gamma_odd: np.ndarray
    beta_odd: np.ndarray
    gamma_even: np.ndarray
    beta_even: np.ndarray
    outcome: SolveOutcome
    certified_margin: float

    @property
    def residual(self) -> float:
        return self.outcome.residual

    @property
    def condition_estimate(self) -> float:
        return self.outcome.condition_estimate


@dataclass(frozen=True)
class BlockSolution:
    gamma: np.ndarray
    outcome: SolveOutcome
    nonzero_flag: bool
