"""Fast int32 -> float32 conversion through a shared-bit-pattern bias.

tmp = x + 0x4B400000 as an integer, reinterpret tmp as float32, subtract
12582912.0. Exact for x in [-2^22, 2^22); outside that range the result is
undefined, as in the kernel. The range check is an ``assert``.
"""

from __future__ import annotations

import numpy as np

from mixquant.gemm_engine.models import I2F

BIAS_INT = np.int32(I2F.bias_int)
BIAS_FP = np.float32(I2F.bias_fp)
_LO, _HI = I2F.safe_range


def fast_i2f(x: np.ndarray | int) -> np.ndarray:
    values = np.asarray(x, dtype=np.int32)
    assert values.size == 0 or (values.min() >= _LO and values.max() < _HI), "fast_i2f input outside [-2^22, 2^22)"
    biased = values + BIAS_INT
    return biased.view(np.float32) - BIAS_FP


def biased_to_float(biased: np.ndarray) -> np.ndarray:
    """Second half of the fused form: an accumulator that started at the integer bias."""
    return np.asarray(biased, dtype=np.int32).view(np.float32) - BIAS_FP


def native_i2f(x: np.ndarray | int) -> np.ndarray:
    return np.asarray(x, dtype=np.int32).astype(np.float32)
