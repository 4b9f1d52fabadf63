import enum
import math
from typing import Annotated

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator, model_validator

from normrecon.constants import DEFAULT_N_TEST, DEFAULT_N_TRAIN


class Algorithm(str, enum.Enum):
    SGD_BN = "sgd_bn"
    CONSTRUCT_FROM_TEACHER = "construct_from_teacher"
    CONSTRUCT_FROM_LEARNED = "construct_from_learned"


class Schedule(str, enum.Enum):
    CONSTANT = "constant"
    COSINE = "cosine"
    EXPONENTIAL = "exponential"


class LayerReport(BaseModel):
    """Diagnostics of one solved system (a wide pair or one skip block)."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    layer: int
    block: int | None = None
    residual: float
    condition_estimate: float
    rank: int
    full_rank: bool
    pseudo_inverse: bool = False
    certified_margin: float | None = None
    nonzero_scales: bool | None = None
    density: float | None = None
    zero_rows: int | None = None
    zero_cols: int | None = None


class EquivalenceResult(BaseModel):
    samples: int
    max_abs_error: float
    mean_abs_error: float
    domain_radius: float

    @model_validator(mode="after")
    def check_ordering(self):
        if not (self.max_abs_error >= self.mean_abs_error >= 0.0):
            raise ValueError("Expected max_abs_error >= mean_abs_error >= 0")
        return self

    def within(self, tolerance: float) -> bool:
        return self.max_abs_error <= tolerance


class ReconstructionReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    kind: str
    seed: int | None = None
    layers: list[LayerReport] = Field(default_factory=list)
    resamples: int = 0
    redraws: int = 0
    trainable_parameters: int = 0
    frozen_parameters: int = 0
    failure_rate_bound: float | None = None
    equivalence: EquivalenceResult | None = None

    @property
    def worst_residual(self) -> float:
        return max((layer.residual for layer in self.layers), default=0.0)

    @property
    def all_full_rank(self) -> bool:
        return all(layer.full_rank for layer in self.layers)


class SGDConfig(BaseModel):
    learning_rate: float = Field(default=0.01, gt=0.0)
    batch_size: PositiveInt = 256
    epochs: PositiveInt = 5
    schedule: Schedule = Schedule.CONSTANT
    decay: float = Field(default=0.95, gt=0.0, le=1.0)


class ExperimentConfig(BaseModel):
    teacher_width: PositiveInt = 8
    teacher_depth: PositiveInt = 1
    student_widths: list[PositiveInt] = Field(default_factory=list)
    sparsity: float = Field(default=1.0, gt=0.0, le=1.0)
    sparsities: list[Annotated[float, Field(gt=0.0, le=1.0)]] = Field(default_factory=list)
    n_train: PositiveInt = DEFAULT_N_TRAIN
    n_test: PositiveInt = DEFAULT_N_TEST
    sgd: SGDConfig = Field(default_factory=SGDConfig)
    dense_sgd: SGDConfig | None = None
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    algorithms: list[Algorithm] = Field(default_factory=lambda: list(Algorithm))
    gradient_gate: bool = True
    record_wall_time: bool = True
    workers: PositiveInt = 1

    @field_validator("seeds")
    @classmethod
    def check_seeds(cls, seeds: list[int]) -> list[int]:
        if not seeds:
            raise ValueError("At least one seed is required")
        return seeds

    @property
    def widths(self) -> list[int]:
        return self.student_widths or [self.teacher_width**2]

    @property
    def sparsity_levels(self) -> list[float]:
        return self.sparsities or [self.sparsity]


class SweepRow(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    algorithm: Algorithm
    width: int
    sparsity: float
    seed: int
    train_mse: float
    test_mse: float
    wall_time_s: float
    reason: str | None = None

    @field_validator("train_mse", "test_mse")
    @classmethod
    def check_mse(cls, value: float) -> float:
        if not math.isnan(value) and value < 0.0:
            raise ValueError("MSE must be nonnegative")
        return value

    @property
    def failed(self) -> bool:
        return self.reason is not None


class TrainingResult(BaseModel):
    """Per-epoch mean training loss; ``diverged`` is set when a loss or gradient stops being finite."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    losses: list[float] = Field(default_factory=list)
    diverged: bool = False

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


class SummaryRow(BaseModel):
    """Trimmed mean over seeds of one (algorithm, width, sparsity) cell."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    algorithm: Algorithm
    width: int
    sparsity: float
    train_mse: float
    test_mse: float
    runs: int
    failures: int
