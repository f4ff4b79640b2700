"""Pydantic models for the GEMM engine."""

from __future__ import annotations

import struct
from enum import Enum
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, PositiveInt


class I2FMode(str, Enum):  # noqa: UP042
    NATIVE = "native"
    FAST = "fast"


class I2FConstants(BaseModel):
    """Shared bit pattern of the fast integer-to-float bias."""

    model_config = ConfigDict(frozen=True)

    bias_bits: int = 0x4B400000

    @property
    def bias_int(self) -> int:
        return struct.unpack("<i", struct.pack("<I", self.bias_bits))[0]

    @property
    def bias_fp(self) -> float:
        return struct.unpack("<f", struct.pack("<I", self.bias_bits))[0]

    @property
    def safe_range(self) -> tuple[int, int]:
        """Half-open range [lo, hi) converted exactly."""
        return -(2**22), 2**22


I2F = I2FConstants()


class TileConfig(BaseModel):
    """Output block per task plus the group tile along K.

    Group accumulators are int32 and the global accumulator float32; a group
    tile of at most 128 keeps every int8 x int8 group dot inside the exact
    fast-conversion range.
    """

    model_config = ConfigDict(frozen=True)

    tile_m: PositiveInt = 64
    tile_n: PositiveInt = 64
    group_size: int = Field(default=128, ge=1, le=128)


class BenchResult(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    m: int = Field(alias="M")
    n: int = Field(alias="N")
    k: int = Field(alias="K")
    config: dict[str, Any]
    wall_time_s: float
    effective_gops: float
    checksum: str

    def report(self) -> dict[str, Any]:
        return self.model_dump(mode="json", by_alias=True)
