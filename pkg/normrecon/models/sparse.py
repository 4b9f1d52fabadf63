from dataclasses import dataclass

import numpy as np

from normrecon.errors import ShapeMismatchError


@dataclass(frozen=True)
class SparseMask:
    """Boolean mask with i.i.d. Bernoulli(p) entries."""

    bits: np.ndarray
    p: float
    seed: int | None = None

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        if bits.ndim != 2:
            raise ShapeMismatchError("SparseMask bits must be a matrix")
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"Mask probability must lie in (0, 1], got {self.p}")

    @classmethod
    def sample(
        cls,
        shape: tuple[int, int],
        p: float,
        rng: np.random.Generator,
        seed: int | None = None,
    ) -> "SparseMask":
        return cls(rng.random(shape) < p, p, seed)

    @classmethod
    def dense(cls, shape: tuple[int, int]) -> "SparseMask":
        return cls(np.ones(shape, dtype=bool), 1.0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @property
    def density(self) -> float:
        return float(self.bits.mean()) if self.bits.size else 0.0

    def as_matrix(self) -> np.ndarray:
        return self.bits.astype(np.float64)

    def zero_rows(self) -> int:
        return int(np.sum(~self.bits.any(axis=1)))

    def zero_cols(self) -> int:
        return int(np.sum(~self.bits.any(axis=0)))


@dataclass(frozen=True)
class SingularityEstimate:
    trials: int
    failures: int
    wilson_interval: tuple[float, float]

    @property
    def rate(self) -> float:
        return self.failures / self.trials

    def as_dict(self) -> dict:
        return {
            "trials": self.trials,
            "failures": self.failures,
            "rate": self.rate,
            "interval": list(self.wilson_interval),
        }
