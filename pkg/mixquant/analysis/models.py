"""Pydantic models for analytical reports."""

from __future__ import annotations

import math

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, model_validator

from mixquant.salience_search.models import SalienceEstimator


class IntensityQuery(BaseModel):
    """GEMM of M tokens through an N x K weight; bytes per activation and per weight element."""

    model_config = ConfigDict(frozen=True)

    m: PositiveInt
    n: PositiveInt
    k: PositiveInt
    b_act: PositiveFloat = 1.0
    b_weight: PositiveFloat = 1.0

    @property
    def ops(self) -> int:
        return 2 * self.m * self.n * self.k

    @property
    def bytes_moved(self) -> float:
        return self.m * self.k * self.b_act + self.k * self.n * self.b_weight


class LayerDistribution(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    layer_class: str
    channels: PositiveInt
    promoted: int = Field(ge=0)

    @property
    def percent(self) -> float:
        return self.promoted / self.channels


class ClassDistribution(BaseModel):
    """Average share of large-bit channels over all layers of one class."""

    model_config = ConfigDict(frozen=True)

    layer_class: str
    layers: PositiveInt
    channels: PositiveInt
    promoted: int = Field(ge=0)
    average_percent: float


class DistributionReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    layers: list[LayerDistribution]
    classes: list[ClassDistribution]
    global_percent: float

    @model_validator(mode="after")
    def _check_consistency(self) -> DistributionReport:
        channels = sum(layer.channels for layer in self.layers)
        weighted = sum(layer.percent * layer.channels for layer in self.layers) / channels
        if not math.isclose(weighted, self.global_percent, rel_tol=0.0, abs_tol=1e-9):
            raise ValueError(f"Per-layer percents average to {weighted}, global percent is {self.global_percent}")
        return self


class ProxyReport(BaseModel):
    """Float vs quantized forward passes on one dataset."""

    model_config = ConfigDict(frozen=True)

    samples: PositiveInt
    float_loss: float
    quantized_loss: float
    loss_delta: float = Field(ge=0.0, description="mean over samples of |l_q - l_f|")
    mean_loss_shift: float = Field(description="mean over samples of l_q - l_f")
    logit_mse: float = Field(ge=0.0)


class EstimatorComparison(BaseModel):
    """Proxy quality of one global search run, per salience estimator."""

    model_config = ConfigDict(frozen=True)

    estimator: SalienceEstimator
    promoted: list[int] = Field(description="large-bit channels per layer")
    proxy: ProxyReport
