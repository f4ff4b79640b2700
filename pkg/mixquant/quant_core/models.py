"""Pydantic models for group-wise quantization."""

from __future__ import annotations

import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

from mixquant.tensor_store.models import DenseTensor, DType


class GroupQuantParams(BaseModel):
    """Affine parameters of one quantization group: x' = (code - z) * s."""

    model_config = ConfigDict(frozen=True)

    scale: float = Field(gt=0.0)
    zero_point: int = Field(default=0, ge=0)
    bit_width: Literal[4, 8]
    symmetric: bool

    @model_validator(mode="after")
    def _check_zero_point(self) -> GroupQuantParams:
        if self.symmetric and self.zero_point != 0:
            raise ValueError("Symmetric groups have zero_point 0")
        if not self.symmetric and self.zero_point > 2**self.bit_width - 1:
            raise ValueError(f"Zero point {self.zero_point} outside [0, {2**self.bit_width - 1}]")
        return self


class QuantScheme(BaseModel):
    """How a matrix is quantized along its last (reduction) axis."""

    model_config = ConfigDict(frozen=True)

    bit_width: Literal[4, 8]
    symmetric: bool
    group_size: PositiveInt = 128
    group_axis: Literal[-1] = -1
    half_scales: bool = Field(default=False, description="Round stored scales to binary16")

    @property
    def qmin(self) -> int:
        return -(2 ** (self.bit_width - 1) - 1) if self.symmetric else 0

    @property
    def qmax(self) -> int:
        return 2 ** (self.bit_width - 1) - 1 if self.symmetric else 2**self.bit_width - 1

    @property
    def scale_dtype(self) -> type[np.floating]:
        return np.float16 if self.half_scales else np.float32

    @property
    def scale_bits(self) -> int:
        return 16 if self.half_scales else 32

    @property
    def payload_dtype(self) -> DType:
        if self.bit_width == 4:
            return DType.U4_PACKED
        return DType.I8 if self.symmetric else DType.U8

    @property
    def label(self) -> str:
        return f"{'sym' if self.symmetric else 'asym'}{self.bit_width}g{self.group_size}"

    def n_groups(self, row_length: int) -> int:
        return math.ceil(row_length / self.group_size)

    def group_starts(self, row_length: int) -> np.ndarray:
        return np.arange(0, row_length, self.group_size)

    def group_sizes(self, row_length: int) -> np.ndarray:
        starts = self.group_starts(row_length)
        return np.diff(np.append(starts, row_length))

    def aligned_with(self, other: QuantScheme) -> bool:
        return self.group_size == other.group_size


SMALLBIT_SCHEME = QuantScheme(bit_width=4, symmetric=False)
LARGEBIT_SCHEME = QuantScheme(bit_width=8, symmetric=True)
ACTIVATION_SCHEME = QuantScheme(bit_width=8, symmetric=True)


class QuantizedTensor(BaseModel):
    """Quantized matrix: packed codes plus per-group scales and zero points.

    ``scales`` and ``zero_points`` have shape (rows, groups); zero points are
    present only for asymmetric schemes.
    """

    model_config = ConfigDict(frozen=True)

    shape: tuple[PositiveInt, PositiveInt]
    scheme: QuantScheme
    payload: DenseTensor
    scales: DenseTensor
    zero_points: DenseTensor | None = None

    @model_validator(mode="after")
    def _check_layout(self) -> QuantizedTensor:
        rows, cols = self.shape
        groups = self.scheme.n_groups(cols)
        if self.payload.dtype != self.scheme.payload_dtype or self.payload.count != rows * cols:
            raise ValueError(
                f"Payload {self.payload.dtype.value}{self.payload.shape} does not hold {rows}x{cols} codes"
            )
        if self.scales.dtype != DType.F32 or self.scales.shape != [rows, groups]:
            raise ValueError(f"Scales must be f32[{rows}, {groups}], got {self.scales.dtype.value}{self.scales.shape}")
        if self.scheme.symmetric:
            if self.zero_points is not None:
                raise ValueError("Symmetric tensors carry no zero points")
        elif (
            self.zero_points is None
            or self.zero_points.dtype != DType.U8
            or self.zero_points.shape != [rows, groups]
        ):
            raise ValueError(f"Asymmetric tensors need u8[{rows}, {groups}] zero points")
        codes = self.codes()
        if codes.min() < self.scheme.qmin or codes.max() > self.scheme.qmax:
            raise ValueError(f"Codes outside [{self.scheme.qmin}, {self.scheme.qmax}]")
        if not np.all(self.scales.array > 0):
            raise ValueError("Scales must be positive")
        return self

    @property
    def rows(self) -> int:
        return self.shape[0]

    @property
    def cols(self) -> int:
        return self.shape[1]

    @property
    def n_groups(self) -> int:
        return self.scheme.n_groups(self.cols)

    def codes(self) -> np.ndarray:
        """Integer codes as (rows, cols): uint8 for asymmetric, int8 for symmetric."""
        raw = self.payload.array.reshape(self.shape)
        if self.scheme.symmetric and self.payload.dtype == DType.U4_PACKED:
            # two's-complement nibbles
            signed = raw.astype(np.int8)
            return np.where(signed > 7, signed - 16, signed).astype(np.int8)
        return raw

    def scale_array(self) -> np.ndarray:
        return self.scales.array

    def zero_point_array(self) -> np.ndarray:
        if self.zero_points is None:
            return np.zeros((self.rows, self.n_groups), dtype=np.uint8)
        return self.zero_points.array

    def group_params(self, row: int, group: int) -> GroupQuantParams:
        return GroupQuantParams(
            scale=float(self.scale_array()[row, group]),
            zero_point=int(self.zero_point_array()[row, group]),
            bit_width=self.scheme.bit_width,
            symmetric=self.scheme.symmetric,
        )
