"""4-bit nibble codec.

Byte k holds value 2k in the low nibble and value 2k+1 in the high nibble.
An odd count pads the final high nibble with 0.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from mixquant.errors import UsageError


def pack_nibbles(values: Sequence[int] | np.ndarray) -> bytes:
    """Pack unsigned 4-bit values two per byte, low nibble first."""
    arr = np.asarray(values, dtype=np.int64).reshape(-1)
    if arr.size and (arr.min() < 0 or arr.max() > 15):
        bad = arr[(arr < 0) | (arr > 15)][0]
        raise UsageError(f"Nibble value {int(bad)} outside [0, 15]")
    if arr.size % 2:
        arr = np.concatenate([arr, np.zeros(1, dtype=np.int64)])
    packed = arr[0::2] | (arr[1::2] << 4)
    return packed.astype(np.uint8).tobytes()


def unpack_nibbles(data: bytes | bytearray | Sequence[int], count: int) -> np.ndarray:
    """Inverse of :func:`pack_nibbles` for the first ``count`` values (uint8 array)."""
    raw = np.frombuffer(bytes(data), dtype=np.uint8)
    if count < 0 or count > 2 * raw.size:
        raise UsageError(f"Cannot unpack {count} nibbles from {raw.size} bytes")
    out = np.empty(2 * raw.size, dtype=np.uint8)
    out[0::2] = raw & 0x0F
    out[1::2] = raw >> 4
    return out[:count]
