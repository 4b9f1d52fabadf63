import enum
from dataclasses import dataclass

import numpy as np


class SolveClassification(str, enum.Enum):
    NO_SOLUTION = "NoSolution"
    UNIQUE = "Unique"
    INFINITE = "Infinite"


class Distribution(str, enum.Enum):
    UNIFORM = "uniform"
    NORMAL = "normal"

    def sample(self, rng: np.random.Generator, shape, low: float = -1.0, high: float = 1.0):
        if self is Distribution.NORMAL:
            return rng.standard_normal(shape)
        return rng.uniform(low, high, shape)


@dataclass(frozen=True)
class SolveOutcome:
    classification: SolveClassification
    solution: np.ndarray | None
    residual: float
    condition_estimate: float
    rank: int
    pseudo_inverse: bool = False
    least_squares: np.ndarray | None = None

    @property
    def solved(self) -> bool:
        return self.solution is not None

    @property
    def estimate(self) -> np.ndarray | None:
        """The exact solution when one exists, otherwise the minimum-norm least-squares fit."""
        return self.solution if self.solution is not None else self.least_squares

    def __repr__(self):
        return (
            f"<SolveOutcome({self.classification.value}, residual={self.residual:.2e}, "
            f"cond={self.condition_estimate:.2e}, pinv={self.pseudo_inverse})>"
        )
