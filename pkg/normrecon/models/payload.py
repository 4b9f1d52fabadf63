from typing import Annotated, Literal

from pydantic import BaseModel, Field, NonNegativeInt, PositiveInt, model_validator

from normrecon.constants import NETWORK_SCHEMA_VERSION
from normrecon.models.report import ReconstructionReport


class MatrixPayload(BaseModel):
    """Dense matrix as {"rows", "cols", "data"} with data in row-major order."""

    rows: NonNegativeInt
    cols: NonNegativeInt
    data: list[float]

    @model_validator(mode="after")
    def check_size(self):
        if len(self.data) != self.rows * self.cols:
            raise ValueError(f"Matrix data has {len(self.data)} entries, expected {self.rows}x{self.cols}")
        return self


class NormPayload(BaseModel):
    scale: list[float]
    shift: list[float]
    mean: list[float]
    variance: list[float]


class TargetLayerPayload(BaseModel):
    scale: list[float]
    weight: MatrixPayload
    shift: list[float]


class WidePairPayload(BaseModel):
    w_odd: MatrixPayload
    w_even: MatrixPayload
    norm_odd: NormPayload
    norm_even: NormPayload


class SkipBlockPayload(BaseModel):
    weight: MatrixPayload
    projection: MatrixPayload
    norm: NormPayload


class SkipLayerPayload(BaseModel):
    blocks: list[SkipBlockPayload]
    output: MatrixPayload
    chunk: PositiveInt
    in_dim: PositiveInt


class _NetworkPayload(BaseModel):
    input_dim: PositiveInt
    seed: int | None = None
    version: Literal[1] = NETWORK_SCHEMA_VERSION


class TargetNetworkPayload(_NetworkPayload):
    kind: Literal["target"] = "target"
    layers: list[TargetLayerPayload] = Field(min_length=1)


class WideNetworkPayload(_NetworkPayload):
    kind: Literal["wide"] = "wide"
    layers: list[WidePairPayload] = Field(min_length=1)


class SkipNetworkPayload(_NetworkPayload):
    kind: Literal["skip"] = "skip"
    chunk: PositiveInt
    layers: list[SkipLayerPayload] = Field(min_length=1)


NetworkPayload = Annotated[
    TargetNetworkPayload | WideNetworkPayload | SkipNetworkPayload,
    Field(discriminator="kind"),
]


class ConstructionResult(BaseModel):
    """A constructed network together with its solve diagnostics."""

    network: NetworkPayload
    report: ReconstructionReport
