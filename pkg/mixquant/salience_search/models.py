"""Pydantic models for the precision search."""

from __future__ import annotations

from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, model_validator


class SalienceMode(str, Enum):  # noqa: UP042
    AGGREGATED = "aggregated"
    PER_SAMPLE = "per-sample"


class SalienceEstimator(str, Enum):  # noqa: UP042
    """Per-channel loss estimate; ``taylor`` keeps both Taylor terms and is the default."""

    TAYLOR = "taylor"
    SECOND_ORDER = "second-order"
    FISHER_DIAG = "fisher-diag"


class SearchStrategy(str, Enum):  # noqa: UP042
    GLOBAL = "global"
    LOCAL = "local"
    RANDOM = "random"


class ChannelSalience(BaseModel):
    """Estimated loss increase S_c from quantizing one output channel."""

    model_config = ConfigDict(frozen=True)

    layer_id: NonNegativeInt
    channel_id: NonNegativeInt
    salience: float = Field(ge=0.0)


class PrecisionAssignment(BaseModel):
    """Partition of every output channel of every linear layer into large-bit and small-bit sets.

    Channel lists are per layer and sorted ascending.
    """

    model_config = ConfigDict(frozen=True)

    percent: float = Field(ge=0.0, le=1.0)
    n_largebit: NonNegativeInt
    layer_names: list[str]
    out_features: list[int]
    largebit: list[list[int]]
    smallbit: list[list[int]]
    strategy: SearchStrategy = SearchStrategy.GLOBAL
    salience_mode: SalienceMode | None = SalienceMode.AGGREGATED
    estimator: SalienceEstimator | None = SalienceEstimator.TAYLOR

    @model_validator(mode="after")
    def _check_partition(self) -> PrecisionAssignment:
        n_layers = len(self.layer_names)
        if not (len(self.out_features) == len(self.largebit) == len(self.smallbit) == n_layers):
            raise ValueError("largebit, smallbit and out_features need one entry per layer")
        promoted = 0
        for name, width, large, small in zip(
            self.layer_names, self.out_features, self.largebit, self.smallbit, strict=True
        ):
            if large != sorted(large) or small != sorted(small):
                raise ValueError(f"Channel lists of {name} must be sorted ascending")
            if sorted(large + small) != list(range(width)):
                raise ValueError(f"Channels of {name} are not partitioned into [0, {width})")
            promoted += len(large)
        if promoted != self.n_largebit:
            raise ValueError(f"{promoted} channels promoted but n_largebit is {self.n_largebit}")
        return self

    @property
    def total_channels(self) -> int:
        return sum(self.out_features)

    @property
    def largebit_channels(self) -> set[tuple[int, int]]:
        return {(i, c) for i, layer in enumerate(self.largebit) for c in layer}

    @property
    def smallbit_channels(self) -> set[tuple[int, int]]:
        return {(i, c) for i, layer in enumerate(self.smallbit) for c in layer}
