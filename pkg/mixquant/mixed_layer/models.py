"""Pydantic models for mixed-precision linear layers."""

from __future__ import annotations

from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator, model_validator

from mixquant.quant_core.models import ACTIVATION_SCHEME, QuantizedTensor, QuantScheme


def _read_only(array: np.ndarray, dtype: type[np.generic]) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


class PrepackedWeight(BaseModel):
    """Tile-major copy of one sub-problem's weight, laid out for the engine.

    ``codes`` is (tiles, tile_rows, in_features) int8; ``zero_points`` is
    (tiles, tile_rows, groups) int8 and ``scales`` the matching float32.
    Rows past ``rows`` are padding with zero codes and zero scales.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    tile_rows: PositiveInt
    rows: PositiveInt
    group_size: PositiveInt
    bit_width: int
    codes: np.ndarray
    zero_points: np.ndarray
    scales: np.ndarray

    @field_validator("codes", "zero_points", mode="before")
    @classmethod
    def _freeze_int(cls, value: np.ndarray) -> np.ndarray:
        return _read_only(value, np.int8)

    @field_validator("scales", mode="before")
    @classmethod
    def _freeze_scales(cls, value: np.ndarray) -> np.ndarray:
        return _read_only(value, np.float32)

    @model_validator(mode="after")
    def _check_tiles(self) -> PrepackedWeight:
        tiles = -(-self.rows // self.tile_rows)
        if self.codes.ndim != 3 or self.codes.shape[:2] != (tiles, self.tile_rows):
            raise ValueError(f"Codes must be ({tiles}, {self.tile_rows}, K), got {self.codes.shape}")
        groups = -(-self.codes.shape[2] // self.group_size)
        expected = (tiles, self.tile_rows, groups)
        if self.zero_points.shape != expected or self.scales.shape != expected:
            raise ValueError(f"Zero points and scales must be {expected}")
        return self

    @property
    def tiles(self) -> int:
        return self.codes.shape[0]

    @property
    def in_features(self) -> int:
        return self.codes.shape[2]


class MixedLinearLayer(BaseModel):
    """One linear layer split by output channel.

    ``index_map8[k]`` is the original output channel of row k of ``sub8``;
    likewise for ``sub4``. Rows keep ascending original order. An empty
    sub-problem is ``None`` with an empty map.
    """

    model_config = ConfigDict(frozen=True)

    name: str
    out_features: PositiveInt
    in_features: PositiveInt
    sub8: QuantizedTensor | None = None
    sub4: QuantizedTensor | None = None
    index_map8: list[int] = Field(default_factory=list)
    index_map4: list[int] = Field(default_factory=list)
    prepacked8: PrepackedWeight | None = None
    prepacked4: PrepackedWeight | None = None

    @model_validator(mode="after")
    def _check_split(self) -> MixedLinearLayer:
        if sorted(self.index_map8 + self.index_map4) != list(range(self.out_features)):
            raise ValueError(f"Index maps of {self.name} are not a permutation of [0, {self.out_features})")
        for label, sub, index_map in (("sub8", self.sub8, self.index_map8), ("sub4", self.sub4, self.index_map4)):
            if index_map != sorted(index_map):
                raise ValueError(f"{label} index map of {self.name} must be ascending")
            rows = 0 if sub is None else sub.rows
            if rows != len(index_map):
                raise ValueError(f"{label} of {self.name} has {rows} rows but its map lists {len(index_map)}")
            if sub is not None and sub.cols != self.in_features:
                raise ValueError(f"{label} of {self.name} has {sub.cols} columns, layer has {self.in_features}")
        if self.sub8 is not None and self.sub4 is not None and not self.sub8.scheme.aligned_with(self.sub4.scheme):
            raise ValueError(f"Sub-problems of {self.name} use different group boundaries")
        return self

    @property
    def shape(self) -> tuple[int, int]:
        return self.out_features, self.in_features

    @property
    def group_size(self) -> int:
        sub = self.sub8 if self.sub8 is not None else self.sub4
        assert sub is not None
        return sub.scheme.group_size

    def subproblems(self) -> list[tuple[int, QuantizedTensor, list[int], PrepackedWeight | None]]:
        """Non-empty sub-problems as (bits, tensor, index map, prepacked layout), 8-bit first."""
        out: list[tuple[int, QuantizedTensor, list[int], PrepackedWeight | None]] = []
        if self.sub8 is not None:
            out.append((8, self.sub8, self.index_map8, self.prepacked8))
        if self.sub4 is not None:
            out.append((4, self.sub4, self.index_map4, self.prepacked4))
        return out


class QuantizedModel(BaseModel):
    """A toy MLP whose linear layers are all mixed-precision, ReLU between them."""

    model_config = ConfigDict(frozen=True, protected_namespaces=())

    model_name: str = "toy"
    layers: list[MixedLinearLayer] = Field(..., min_length=1)
    act_scheme: QuantScheme = ACTIVATION_SCHEME
    percent: float | None = None
    metadata: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_chain(self) -> QuantizedModel:
        for prev, layer in zip(self.layers, self.layers[1:], strict=False):
            if prev.out_features != layer.in_features:
                raise ValueError(
                    f"{layer.name} expects {layer.in_features} inputs, {prev.name} produces {prev.out_features}"
                )
        return self

    @property
    def layer_names(self) -> list[str]:
        return [layer.name for layer in self.layers]

    @property
    def dims(self) -> list[int]:
        return [self.layers[0].in_features] + [layer.out_features for layer in self.layers]


class LayerFootprint(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    in_features: int
    out_features: int
    n8: int
    n4: int
    payload_bits: int
    overhead_bits: int

    @property
    def weights(self) -> int:
        return self.in_features * self.out_features

    @property
    def effective_bits(self) -> float:
        return self.payload_bits / self.weights

    @property
    def effective_bits_with_overhead(self) -> float:
        return (self.payload_bits + self.overhead_bits) / self.weights


class FootprintReport(BaseModel):
    """Weight storage cost; payload-only bits follow the W4.4 / W4.8 / W6 naming."""

    model_config = ConfigDict(frozen=True)

    layers: list[LayerFootprint]

    @property
    def total_weights(self) -> int:
        return sum(layer.weights for layer in self.layers)

    @property
    def payload_bits(self) -> int:
        return sum(layer.payload_bits for layer in self.layers)

    @property
    def overhead_bits(self) -> int:
        return sum(layer.overhead_bits for layer in self.layers)

    @property
    def total_bits(self) -> int:
        return self.payload_bits + self.overhead_bits

    @property
    def effective_bits(self) -> float:
        return self.payload_bits / self.total_weights

    @property
    def effective_bits_with_overhead(self) -> float:
        return self.total_bits / self.total_weights

    def summary(self) -> dict[str, Any]:
        return {
            "total_weights": self.total_weights,
            "payload_bits": self.payload_bits,
            "overhead_bits": self.overhead_bits,
            "total_bits": self.total_bits,
            "effective_bits": self.effective_bits,
            "effective_bits_with_overhead": self.effective_bits_with_overhead,
            "layers": [
                {
                    **layer.model_dump(),
                    "effective_bits": layer.effective_bits,
                    "effective_bits_with_overhead": layer.effective_bits_with_overhead,
                }
                for layer in self.layers
            ],
        }
