"""Group-wise round-to-nearest quantization.

Asymmetric: s = (max - min) / (2^b - 1), z = clamp(round(-min / s)), with the
range widened to contain zero. Symmetric: s = max|x| / (2^(b-1) - 1), z = 0,
codes in +-(2^(b-1) - 1). A constant group uses s = max(|v|, 1e-8) so it
reconstructs exactly. Codes are computed against the stored scale, so the
s/2 error bound holds for the scale that is actually kept. A stored scale is
bumped to the next storable value when rounding would let the top code
overshoot; scales below the smallest subnormal are floored there, and a scale
that overflows the storage type is an error.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import structlog

from mixquant.errors import QuantizationError, UsageError
from mixquant.metrics import QUANTIZED_GROUPS
from mixquant.quant_core.models import GroupQuantParams, QuantizedTensor, QuantScheme
from mixquant.tensor_store.models import DenseTensor, DType

logger = structlog.get_logger()

DEGENERATE_SCALE = 1e-8


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest, ties away from zero (keeps quantization sign-symmetric)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _store_scale(scale: np.ndarray, scheme: QuantScheme) -> np.ndarray:
    dtype = scheme.scale_dtype
    with np.errstate(over="ignore"):
        stored = np.maximum(scale.astype(dtype), np.finfo(dtype).smallest_subnormal)
    wide = stored.astype(np.float64)
    if scheme.symmetric:
        # the clipped top code must stay within half a step of max|x|
        low = wide * (scheme.qmax + 0.5) < scale * scheme.qmax
    else:
        # never below the exact asymmetric step, so the top code cannot overshoot the grid
        low = wide < scale
    stored = np.where(low, np.nextafter(stored, dtype(np.inf)), stored)
    overflow = np.isinf(stored)
    if overflow.any():
        row, group = (int(i) for i in np.argwhere(overflow)[0])
        message = f"Scale {scale[row, group]:.6g} does not fit in {np.dtype(dtype).name}"
        raise QuantizationError(message, row=row, group=group)
    return stored.astype(np.float64)


def _quantize_rows(x: np.ndarray, scheme: QuantScheme) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Quantize every group of a (rows, cols) float64 matrix.

    Returns int64 codes (rows, cols), float64 stored scales (rows, groups) and
    int64 zero points (rows, groups) or None for symmetric schemes.
    """
    cols = x.shape[1]
    starts = scheme.group_starts(cols)
    sizes = scheme.group_sizes(cols)

    if scheme.symmetric:
        amax = np.maximum.reduceat(np.abs(x), starts, axis=1)
        scale = np.where(amax == 0.0, DEGENERATE_SCALE, amax / scheme.qmax)
        scale = _store_scale(scale, scheme)
        codes = round_half_away(x / np.repeat(scale, sizes, axis=1))
        return np.clip(codes, scheme.qmin, scheme.qmax).astype(np.int64), scale, None

    gmin = np.minimum.reduceat(x, starts, axis=1)
    gmax = np.maximum.reduceat(x, starts, axis=1)
    lo = np.minimum(gmin, 0.0)
    hi = np.maximum(gmax, 0.0)
    degenerate = gmax == gmin
    scale = np.where(degenerate, np.maximum(np.abs(gmin), DEGENERATE_SCALE), (hi - lo) / scheme.qmax)
    scale = _store_scale(scale, scheme)
    zero = np.clip(round_half_away(-lo / scale), 0, scheme.qmax)
    codes = round_half_away(x / np.repeat(scale, sizes, axis=1)) + np.repeat(zero, sizes, axis=1)
    return np.clip(codes, 0, scheme.qmax).astype(np.int64), scale, zero.astype(np.int64)


def _check_group(values: Sequence[float] | np.ndarray, bit_width: int) -> np.ndarray:
    if bit_width not in (4, 8):
        raise UsageError(f"bit_width must be 4 or 8, got {bit_width}")
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise UsageError("Cannot quantize an empty group")
    if not np.all(np.isfinite(arr)):
        raise QuantizationError("Group contains non-finite values")
    return arr


def quantize_group_asym(values: Sequence[float] | np.ndarray, bit_width: int) -> tuple[np.ndarray, GroupQuantParams]:
    """Asymmetric quantization of one group; codes lie in [0, 2^b - 1]."""
    arr = _check_group(values, bit_width)
    scheme = QuantScheme(bit_width=bit_width, symmetric=False, group_size=arr.size)
    codes, scale, zero = _quantize_rows(arr.reshape(1, -1), scheme)
    assert zero is not None
    params = GroupQuantParams(
        scale=float(scale[0, 0]), zero_point=int(zero[0, 0]), bit_width=bit_width, symmetric=False
    )
    return codes[0], params


def quantize_group_sym(values: Sequence[float] | np.ndarray, bit_width: int) -> tuple[np.ndarray, GroupQuantParams]:
    """Symmetric quantization of one group; codes lie in +-(2^(b-1) - 1)."""
    arr = _check_group(values, bit_width)
    scheme = QuantScheme(bit_width=bit_width, symmetric=True, group_size=arr.size)
    codes, scale, _ = _quantize_rows(arr.reshape(1, -1), scheme)
    params = GroupQuantParams(scale=float(scale[0, 0]), zero_point=0, bit_width=bit_width, symmetric=True)
    return codes[0], params


def dequantize_group(codes: Sequence[int] | np.ndarray, params: GroupQuantParams) -> np.ndarray:
    return (np.asarray(codes, dtype=np.float64) - params.zero_point) * params.scale


def _as_matrix(matrix: DenseTensor | np.ndarray) -> np.ndarray:
    arr = matrix.array if isinstance(matrix, DenseTensor) else np.asarray(matrix)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise UsageError(f"quantize_tensor expects a matrix grouped along its last axis, got shape {arr.shape}")
    return arr.astype(np.float64, copy=False)


def quantize_tensor(matrix: DenseTensor | np.ndarray, scheme: QuantScheme) -> QuantizedTensor:
    """Quantize each contiguous run of ``group_size`` elements along the last axis independently."""
    x = _as_matrix(matrix)
    rows, cols = x.shape
    finite = np.isfinite(x)
    if not finite.all():
        row, col = (int(i) for i in np.argwhere(~finite)[0])
        raise QuantizationError("Non-finite value", row=row, group=col // scheme.group_size)

    codes, scale, zero = _quantize_rows(x, scheme)
    QUANTIZED_GROUPS.labels(scheme=scheme.label).inc(scale.size)

    if scheme.payload_dtype == DType.U4_PACKED:
        # symmetric 4-bit codes travel as two's-complement nibbles
        payload = DenseTensor.from_array(codes & 0x0F, DType.U4_PACKED)
    else:
        payload = DenseTensor.from_array(codes, scheme.payload_dtype)

    return QuantizedTensor(
        shape=(rows, cols),
        scheme=scheme,
        payload=payload,
        scales=DenseTensor.from_array(scale, DType.F32),
        zero_points=None if zero is None else DenseTensor.from_array(zero, DType.U8),
    )


def dequantize_tensor(q: QuantizedTensor) -> DenseTensor:
    """x' = (code - z) * s per element, evaluated in float64."""
    sizes = q.scheme.group_sizes(q.cols)
    scale = np.repeat(q.scale_array().astype(np.float64), sizes, axis=1)
    zero = np.repeat(q.zero_point_array().astype(np.float64), sizes, axis=1)
    values = (q.codes().astype(np.float64) - zero) * scale
    return DenseTensor.from_array(values, DType.F64)


def fake_quantize(matrix: np.ndarray, scheme: QuantScheme) -> np.ndarray:
    """quantize-then-dequantize as a float64 array."""
    return dequantize_tensor(quantize_tensor(matrix, scheme)).array.copy()
