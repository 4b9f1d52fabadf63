class ReconstructionError(Exception):
    """Base class for every failure raised by normrecon."""


class DimensionOverflowError(ReconstructionError):
    """A product shape exceeds the configured size cap."""

    def __init__(self, shape: tuple[int, int], cap: int):
        self.shape = shape
        self.cap = cap
        super().__init__(
            f"Product shape {shape[0]}x{shape[1]} exceeds the size cap of {cap} entries"
        )


class ShapeMismatchError(ReconstructionError, ValueError):
    pass


class NonBooleanEntryError(ReconstructionError, ValueError):
    pass


class NonPositiveVarianceError(ReconstructionError, ValueError):
    pass


class IndexOutOfRangeError(ReconstructionError, IndexError):
    pass


class SVDConvergenceError(ReconstructionError):
    pass


class SystemSingularError(ReconstructionError):
    """The Khatri-Rao system of a layer is numerically rank deficient."""

    def __init__(
        self,
        layer: int,
        condition_estimate: float,
        block: int | None = None,
        report=None,
    ):
        self.layer = layer
        self.block = block
        self.condition_estimate = condition_estimate
        self.report = report
        where = f"layer {layer}" if block is None else f"layer {layer}, block {block}"
        super().__init__(
            f"Khatri-Rao system is singular at {where} (condition estimate {condition_estimate:.3e})"
        )


class ZeroScaleEntryError(ReconstructionError):
    def __init__(self, layer: int, block: int):
        self.layer = layer
        self.block = block
        super().__init__(f"Solved scale has a zero entry at layer {layer}, block {block}")


class RankExceededError(ReconstructionError):
    def __init__(self, layer: int, rank: int, requested: int):
        self.layer = layer
        self.rank = rank
        self.requested = requested
        super().__init__(
            f"Target layer {layer} has numerical rank {rank} > requested rank {requested}"
        )


class GradientCheckError(ReconstructionError):
    pass
