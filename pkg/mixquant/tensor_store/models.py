"""Pydantic models for the Tensor Store."""

from __future__ import annotations

import math
from enum import Enum
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

from mixquant.tensor_store.codec import pack_nibbles, unpack_nibbles


class DType(str, Enum):  # noqa: UP042
    F64 = "f64"
    F32 = "f32"
    I32 = "i32"
    I8 = "i8"
    U8 = "u8"
    U4_PACKED = "u4-packed"


# Little-endian numpy layouts; u4-packed is stored as raw bytes.
NUMPY_DTYPES: dict[DType, np.dtype[Any]] = {
    DType.F64: np.dtype("<f8"),
    DType.F32: np.dtype("<f4"),
    DType.I32: np.dtype("<i4"),
    DType.I8: np.dtype("i1"),
    DType.U8: np.dtype("u1"),
    DType.U4_PACKED: np.dtype("u1"),
}


def payload_size(dtype: DType, count: int) -> int:
    """Bytes needed to hold ``count`` elements of ``dtype``."""
    if dtype == DType.U4_PACKED:
        return (count + 1) // 2
    return count * NUMPY_DTYPES[dtype].itemsize


def dtype_for_array(array: np.ndarray) -> DType:
    kind = array.dtype
    for dtype, np_dtype in NUMPY_DTYPES.items():
        if dtype != DType.U4_PACKED and kind == np_dtype:
            return dtype
    raise ValueError(f"No tensor dtype for numpy dtype {kind}")


class DenseTensor(BaseModel):
    """Immutable row-major tensor: a shape, a dtype and the raw payload bytes."""

    model_config = ConfigDict(frozen=True)

    shape: list[int] = Field(..., min_length=1)
    dtype: DType
    data: bytes

    @model_validator(mode="after")
    def _check_payload(self) -> DenseTensor:
        if any(dim < 1 for dim in self.shape):
            raise ValueError(f"All dimensions must be >= 1, got shape {self.shape}")
        expected = payload_size(self.dtype, self.count)
        if len(self.data) != expected:
            raise ValueError(
                f"Payload holds {len(self.data)} bytes, shape {self.shape} as {self.dtype.value} needs {expected}"
            )
        return self

    @property
    def count(self) -> int:
        return math.prod(self.shape)

    @property
    def array(self) -> np.ndarray:
        """Read-only numpy view (u4-packed tensors are unpacked to uint8)."""
        if self.dtype == DType.U4_PACKED:
            values = unpack_nibbles(self.data, self.count)
            values.flags.writeable = False
            return values.reshape(self.shape)
        return np.frombuffer(self.data, dtype=NUMPY_DTYPES[self.dtype]).reshape(self.shape)

    @classmethod
    def from_array(cls, array: np.ndarray, dtype: DType | None = None) -> DenseTensor:
        """Build a tensor from a numpy array; ``dtype=U4_PACKED`` nibble-packs values in [0, 15]."""
        array = np.asarray(array)
        if array.ndim == 0:
            array = array.reshape(1)
        target = dtype or dtype_for_array(array)
        if target == DType.U4_PACKED:
            data = pack_nibbles(array.reshape(-1))
        else:
            data = np.ascontiguousarray(array, dtype=NUMPY_DTYPES[target]).tobytes()
        return cls(shape=list(array.shape), dtype=target, data=data)


class LayerKind(str, Enum):  # noqa: UP042
    LINEAR = "linear"
    ACTIVATION_FN = "activation-fn"


class TensorRef(BaseModel):
    """Pointer from a manifest layer to one raw tensor file."""

    file: str
    dtype: DType
    shape: list[PositiveInt] = Field(..., min_length=1)


class LayerEntry(BaseModel):
    name: str
    kind: LayerKind
    in_features: int = Field(ge=1)
    out_features: int = Field(ge=1)
    tensors: dict[str, TensorRef] = Field(default_factory=dict)
    metadata: dict[str, Any] = Field(default_factory=dict)


class ModelManifest(BaseModel):
    """Ordered description of a model stored as one JSON file plus raw tensor files."""

    model_config = ConfigDict(protected_namespaces=())

    model_name: str
    layers: list[LayerEntry] = Field(default_factory=list)
    metadata: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_chain(self) -> ModelManifest:
        previous: LayerEntry | None = None
        for layer in self.layers:
            if layer.kind == LayerKind.ACTIVATION_FN and layer.in_features != layer.out_features:
                raise ValueError(f"Activation layer {layer.name} must preserve width")
            if layer.kind != LayerKind.LINEAR:
                continue
            if previous is not None and previous.out_features != layer.in_features:
                raise ValueError(
                    f"Layer {layer.name} expects {layer.in_features} inputs "
                    f"but {previous.name} produces {previous.out_features}"
                )
            previous = layer
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("Layer names must be unique")
        return self

    @property
    def linear_layers(self) -> list[LayerEntry]:
        return [layer for layer in self.layers if layer.kind == LayerKind.LINEAR]


def tensor_key(layer_name: str, role: str) -> str:
    """Key under which a layer's tensor travels in the in-memory tensor mapping."""
    return f"{layer_name}/{role}"
