"""Prometheus collectors for quantization and engine work."""

from __future__ import annotations

from pathlib import Path

from prometheus_client import REGISTRY, Counter, Histogram, generate_latest

QUANTIZED_GROUPS = Counter(
    "mixquant_quantized_groups_total",
    "Quantization groups produced",
    ["scheme"],
)
GEMM_TASKS = Counter(
    "mixquant_gemm_tasks_total",
    "Sub-problem row-tile tasks executed by the GEMM engine",
    ["bits"],
)
GEMM_SECONDS = Histogram(
    "mixquant_gemm_seconds",
    "Wall time of one mixed-precision linear execution",
)


def write_metrics(path: str | Path) -> None:
    Path(path).write_bytes(generate_latest(REGISTRY))
