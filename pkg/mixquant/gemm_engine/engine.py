"""Group-tiled two-step dequantization GEMM.

Per output tile and per K-group, in ascending group order:
  1. w' = W_q - z as int8 (symmetric 8-bit rows have z = 0)
  2. integer MMA of activation codes and w' into an int32 group accumulator
  3. int32 -> float32 (native cast, or the fused fast-I2F bias)
  4. multiply by s_a[g] * s_w[g] in float32
  5. add into the float32 global accumulator
The integer MMA is evaluated with float64 BLAS over integer operands, which
is exact since every partial sum stays far below 2^53.
"""

from __future__ import annotations

import time
from collections.abc import Callable, Iterable
from concurrent.futures import Executor, ThreadPoolExecutor
from typing import TypeVar

import numpy as np
import structlog
from pydantic import ValidationError

from mixquant.errors import DataError, UsageError
from mixquant.gemm_engine.i2f import BIAS_INT, biased_to_float
from mixquant.gemm_engine.models import I2FMode, TileConfig
from mixquant.metrics import GEMM_SECONDS, GEMM_TASKS
from mixquant.mixed_layer.models import MixedLinearLayer, PrepackedWeight, QuantizedModel
from mixquant.mixed_layer.partition import dequantize_layer, prepack_weight, reassemble_output
from mixquant.quant_core.models import ACTIVATION_SCHEME, QuantizedTensor, QuantScheme
from mixquant.quant_core.quantizer import dequantize_tensor, quantize_tensor

logger = structlog.get_logger()

T = TypeVar("T")
R = TypeVar("R")


def tile_for(group_size: int, tile_m: int = 64, tile_n: int = 64) -> TileConfig:
    try:
        return TileConfig(tile_m=tile_m, tile_n=tile_n, group_size=group_size)
    except ValidationError as exc:
        raise UsageError(f"Invalid tile configuration: {exc.errors()[0]['msg']}") from exc


def quantize_activations(a: np.ndarray, act_scheme: QuantScheme = ACTIVATION_SCHEME) -> tuple[np.ndarray, np.ndarray]:
    """Dynamic per-group symmetric quantization; returns int8 codes (M, K) and float32 scales (M, groups)."""
    if act_scheme.bit_width != 8 or not act_scheme.symmetric:
        raise UsageError(f"Activations must be 8-bit symmetric, got {act_scheme.label}")
    q = quantize_tensor(a, act_scheme)
    return q.codes().astype(np.int8), q.scale_array().astype(np.float32)


def _group_slices(k: int, group_size: int) -> list[slice]:
    return [slice(s, min(s + group_size, k)) for s in range(0, k, group_size)]


def _tile_product(
    a_codes: np.ndarray,
    a_scales: np.ndarray,
    pack: PrepackedWeight,
    tile_index: int,
    tile: TileConfig,
    i2f_mode: I2FMode,
) -> np.ndarray:
    codes = pack.codes[tile_index]
    zeros = pack.zero_points[tile_index].astype(np.int16)
    scales = pack.scales[tile_index]
    groups = _group_slices(pack.in_features, pack.group_size)
    m = a_codes.shape[0]
    out = np.zeros((m, pack.tile_rows), dtype=np.float32)

    for m0 in range(0, m, tile.tile_m):
        a_blk = a_codes[m0 : m0 + tile.tile_m]
        s_blk = a_scales[m0 : m0 + tile.tile_m]
        acc = np.zeros((a_blk.shape[0], pack.tile_rows), dtype=np.float32)
        for g, cols in enumerate(groups):
            w_step1 = (codes[:, cols].astype(np.int16) - zeros[:, g : g + 1]).astype(np.int8)
            dot = (a_blk[:, cols].astype(np.float64) @ w_step1.T.astype(np.float64)).astype(np.int32)
            if i2f_mode == I2FMode.FAST:
                group_acc = np.full(dot.shape, BIAS_INT, dtype=np.int32)
                group_acc += dot
                converted = biased_to_float(group_acc)
            else:
                converted = dot.astype(np.float32)
            acc += converted * (s_blk[:, g : g + 1] * scales[None, :, g])
        out[m0 : m0 + a_blk.shape[0]] = acc
    return out


def _check_groups(pack: PrepackedWeight, a_codes: np.ndarray, a_scales: np.ndarray, tile: TileConfig) -> None:
    if a_codes.shape[1] != pack.in_features:
        raise DataError(f"Activations have {a_codes.shape[1]} columns, weight has {pack.in_features}")
    if pack.group_size != tile.group_size:
        raise UsageError(f"Weight group size {pack.group_size} differs from the group tile {tile.group_size}")
    groups = -(-pack.in_features // pack.group_size)
    if a_scales.shape != (a_codes.shape[0], groups):
        raise UsageError(f"Activation scales {a_scales.shape} are not aligned with {groups} weight groups")


def _map(pool: Executor | None, fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    if pool is None:
        return [fn(item) for item in items]
    return list(pool.map(fn, items))


def group_gemm_twostep(
    a_codes: np.ndarray,
    a_scales: np.ndarray,
    weight: QuantizedTensor | PrepackedWeight,
    tile: TileConfig | None = None,
    i2f_mode: I2FMode | str = I2FMode.FAST,
    *,
    pool: Executor | None = None,
) -> np.ndarray:
    """A_q (M, K) int8 with per-group s_a times one sub-problem's weight; returns (M, rows) float32."""
    i2f_mode = I2FMode(i2f_mode)
    pack = weight if isinstance(weight, PrepackedWeight) else None
    if pack is None:
        assert isinstance(weight, QuantizedTensor)
        tile = tile or tile_for(weight.scheme.group_size)
        pack = prepack_weight(weight, tile.tile_n)
    tile = tile or tile_for(pack.group_size, tile_n=pack.tile_rows)
    a_codes = np.atleast_2d(np.asarray(a_codes, dtype=np.int8))
    a_scales = np.atleast_2d(np.asarray(a_scales, dtype=np.float32))
    _check_groups(pack, a_codes, a_scales, tile)

    blocks = _map(pool, lambda t: _tile_product(a_codes, a_scales, pack, t, tile, i2f_mode), range(pack.tiles))
    GEMM_TASKS.labels(bits=str(pack.bit_width)).inc(pack.tiles)
    return np.concatenate(blocks, axis=1)[:, : pack.rows]


def _pack_for(sub: QuantizedTensor, prepacked: PrepackedWeight | None, tile: TileConfig) -> PrepackedWeight:
    if prepacked is not None and prepacked.tile_rows == tile.tile_n:
        return prepacked
    return prepack_weight(sub, tile.tile_n)


def execute_mixed_linear(
    a: np.ndarray,
    layer: MixedLinearLayer,
    act_scheme: QuantScheme = ACTIVATION_SCHEME,
    *,
    tile: TileConfig | None = None,
    i2f_mode: I2FMode | str = I2FMode.FAST,
    pool: Executor | None = None,
) -> np.ndarray:
    """Quantize A on the fly, run both sub-problems and scatter their outputs back."""
    start = time.monotonic()
    i2f_mode = I2FMode(i2f_mode)
    x = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if x.shape[1] != layer.in_features:
        raise DataError(f"Input has {x.shape[1]} features, layer {layer.name} expects {layer.in_features}")
    if act_scheme.group_size != layer.group_size:
        raise UsageError(f"Activation groups of {act_scheme.group_size} do not align with layer {layer.name}")
    tile = tile or tile_for(act_scheme.group_size)
    a_codes, a_scales = quantize_activations(x, act_scheme)

    # one task per (sub-problem, row tile), all in the same pool
    tasks: list[tuple[int, PrepackedWeight, int]] = []
    for bits, sub, _, prepacked in layer.subproblems():
        pack = _pack_for(sub, prepacked, tile)
        _check_groups(pack, a_codes, a_scales, tile)
        tasks.extend((bits, pack, t) for t in range(pack.tiles))

    blocks = _map(pool, lambda task: _tile_product(a_codes, a_scales, task[1], task[2], tile, i2f_mode), tasks)

    outputs: dict[int, np.ndarray] = {}
    for bits, sub, _, _ in layer.subproblems():
        own = [block for (task_bits, _, _), block in zip(tasks, blocks, strict=True) if task_bits == bits]
        outputs[bits] = np.concatenate(own, axis=1)[:, : sub.rows]
        GEMM_TASKS.labels(bits=str(bits)).inc(len(own))

    y = reassemble_output(outputs.get(8), outputs.get(4), layer.index_map8, layer.index_map4)
    elapsed = time.monotonic() - start
    GEMM_SECONDS.observe(elapsed)
    logger.debug(
        "gemm.execute",
        layer=layer.name,
        m=x.shape[0],
        n=layer.out_features,
        k=layer.in_features,
        tasks=len(tasks),
        i2f=i2f_mode.value,
        elapsed_ms=round(elapsed * 1000, 3),
    )
    return y


def reference_linear(a: np.ndarray, layer: MixedLinearLayer, act_scheme: QuantScheme = ACTIVATION_SCHEME) -> np.ndarray:
    """Float64 oracle: dequantize activations and weights, then a plain GEMM."""
    x = np.atleast_2d(np.asarray(a, dtype=np.float64))
    a_deq = dequantize_tensor(quantize_tensor(x, act_scheme)).array
    return a_deq @ dequantize_layer(layer).T


class GemmEngine:
    """Owns the tile configuration, conversion mode and worker pool size."""

    def __init__(
        self,
        tile: TileConfig | None = None,
        i2f_mode: I2FMode | str = I2FMode.FAST,
        workers: int = 1,
    ) -> None:
        if workers < 1:
            raise UsageError(f"workers must be >= 1, got {workers}")
        self.tile = tile
        self.i2f_mode = I2FMode(i2f_mode)
        self.workers = workers

    def _pool(self) -> ThreadPoolExecutor | None:
        return ThreadPoolExecutor(max_workers=self.workers) if self.workers > 1 else None

    def execute(
        self, a: np.ndarray, layer: MixedLinearLayer, act_scheme: QuantScheme = ACTIVATION_SCHEME
    ) -> np.ndarray:
        pool = self._pool()
        try:
            return execute_mixed_linear(a, layer, act_scheme, tile=self.tile, i2f_mode=self.i2f_mode, pool=pool)
        finally:
            if pool is not None:
                pool.shutdown()

    def forward(self, model: QuantizedModel, inputs: np.ndarray) -> np.ndarray:
        """Logits of a quantized toy model: every linear through the engine, ReLU between layers."""
        start = time.monotonic()
        h = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        if h.shape[1] != model.dims[0]:
            raise DataError(f"Input has {h.shape[1]} features, model expects {model.dims[0]}")
        pool = self._pool()
        try:
            last = len(model.layers) - 1
            for i, layer in enumerate(model.layers):
                h = execute_mixed_linear(
                    h, layer, model.act_scheme, tile=self.tile, i2f_mode=self.i2f_mode, pool=pool
                )
                if i < last:
                    h = np.maximum(h, 0.0)
        finally:
            if pool is not None:
                pool.shutdown()
        logger.info(
            "gemm.forward.done",
            model=model.model_name,
            samples=h.shape[0],
            workers=self.workers,
            elapsed_ms=round((time.monotonic() - start) * 1000, 2),
        )
        return h
