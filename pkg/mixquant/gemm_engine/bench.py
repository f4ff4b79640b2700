"""Engine timing on one synthetic mixed-precision layer."""

from __future__ import annotations

import hashlib
import time

import numpy as np
import structlog

from mixquant.calibration.prng import derive_seed, normal_matrix, permutation
from mixquant.errors import UsageError
from mixquant.gemm_engine.engine import GemmEngine, tile_for
from mixquant.gemm_engine.models import BenchResult, I2FMode, TileConfig
from mixquant.mixed_layer.partition import partition_and_quantize
from mixquant.quant_core.models import QuantScheme
from mixquant.salience_search.search import largebit_budget

logger = structlog.get_logger()


def output_checksum(y: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(y, dtype="<f4").tobytes()).hexdigest()


def run_bench(
    m: int,
    n: int,
    k: int,
    *,
    percent: float = 0.1,
    group_size: int = 128,
    i2f_mode: I2FMode | str = I2FMode.FAST,
    workers: int = 1,
    seed: int = 0,
    tile: TileConfig | None = None,
    repeats: int = 1,
) -> BenchResult:
    """Time ``repeats`` executions of an M x K by K x N mixed layer; GOPS counts 2MNK per run."""
    if min(m, n, k, repeats) < 1:
        raise UsageError(f"M, N, K and repeats must be positive, got {m}, {n}, {k}, {repeats}")
    tile = tile or tile_for(group_size)
    weight = normal_matrix(derive_seed(seed, 20), n, k)
    activations = normal_matrix(derive_seed(seed, 21), m, k)
    promoted = permutation(derive_seed(seed, 22), n)[: largebit_budget(percent, n)]

    smallbit = QuantScheme(bit_width=4, symmetric=False, group_size=group_size)
    largebit = QuantScheme(bit_width=8, symmetric=True, group_size=group_size)
    act_scheme = QuantScheme(bit_width=8, symmetric=True, group_size=group_size)
    layer = partition_and_quantize(
        weight, promoted.tolist(), name="bench", smallbit=smallbit, largebit=largebit, tile_rows=tile.tile_n
    )
    engine = GemmEngine(tile=tile, i2f_mode=i2f_mode, workers=workers)

    start = time.perf_counter()
    for _ in range(repeats):
        y = engine.execute(activations, layer, act_scheme)
    elapsed = time.perf_counter() - start

    result = BenchResult(
        M=m,
        N=n,
        K=k,
        config={
            "tile": tile.model_dump(),
            "i2f_mode": engine.i2f_mode.value,
            "workers": workers,
            "percent": percent,
            "largebit_rows": len(promoted),
            "group_size": group_size,
            "seed": seed,
            "repeats": repeats,
        },
        wall_time_s=elapsed,
        effective_gops=2.0 * m * n * k * repeats / max(elapsed, 1e-12) / 1e9,
        checksum=output_checksum(y),
    )
    logger.info("gemm.bench.done", m=m, n=n, k=k, gops=round(result.effective_gops, 3), checksum=result.checksum[:12])
    return result
