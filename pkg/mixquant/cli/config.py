"""Run configuration: CLI flags override a JSON config file, which overrides model defaults."""

from __future__ import annotations

import json
import os
from enum import Enum
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, PositiveInt, ValidationError, model_validator

from mixquant.errors import UsageError
from mixquant.gemm_engine.engine import tile_for
from mixquant.gemm_engine.models import I2FMode, TileConfig
from mixquant.quant_core.models import QuantScheme
from mixquant.salience_search.models import SalienceEstimator, SalienceMode, SearchStrategy

WORKERS_ENV = "MIXQUANT_WORKERS"


class Command(str, Enum):  # noqa: UP042
    GEN_MODEL = "gen-model"
    SEARCH = "search"
    QUANTIZE = "quantize"
    EVAL = "eval"
    BENCH = "bench"
    ANALYZE = "analyze"


class DatasetSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dims: list[PositiveInt] = Field(default_factory=lambda: [32, 64, 64, 8], min_length=2)
    samples: PositiveInt = 256
    seed: NonNegativeInt = 0


class SchemeConfig(BaseModel):
    """Small-bit weights, large-bit weights and activations share one group size."""

    model_config = ConfigDict(extra="forbid")

    weight_bits: Literal[4, 8] = 4
    act_bits: Literal[8] = 8
    group_size: PositiveInt = 128
    half_scales: bool = False

    def smallbit(self) -> QuantScheme:
        return QuantScheme(
            bit_width=self.weight_bits,
            symmetric=self.weight_bits == 8,
            group_size=self.group_size,
            half_scales=self.half_scales,
        )

    def largebit(self) -> QuantScheme:
        return QuantScheme(bit_width=8, symmetric=True, group_size=self.group_size, half_scales=self.half_scales)

    def activation(self) -> QuantScheme:
        return QuantScheme(bit_width=self.act_bits, symmetric=True, group_size=self.group_size)


class BenchShape(BaseModel):
    model_config = ConfigDict(extra="forbid")

    m: PositiveInt = 64
    n: PositiveInt = 1024
    k: PositiveInt = 1024
    repeats: PositiveInt = 1


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    command: Command
    model: Path | None = None
    assignment: Path | None = None
    quantized: Path | None = None
    out: Path | None = None
    report: Path | None = None
    metrics_out: Path | None = None

    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    schemes: SchemeConfig = Field(default_factory=SchemeConfig)
    bench: BenchShape = Field(default_factory=BenchShape)
    percent: float = Field(default=0.1, ge=0.0, le=1.0)
    salience_mode: SalienceMode = SalienceMode.AGGREGATED
    estimator: SalienceEstimator = SalienceEstimator.TAYLOR
    strategy: SearchStrategy = SearchStrategy.GLOBAL
    i2f_mode: I2FMode = I2FMode.FAST
    tile_m: PositiveInt = 64
    tile_n: PositiveInt = 64
    workers: PositiveInt = 1
    sensitive_layer: NonNegativeInt | None = None
    sensitivity: float = Field(default=10.0, gt=0.0)

    @model_validator(mode="after")
    def _check_paths(self) -> RunConfig:
        inputs = {p.resolve() for p in (self.model, self.assignment, self.quantized) if p is not None}
        for output in (self.out, self.report, self.metrics_out):
            if output is not None and output.resolve() in inputs:
                raise ValueError(f"Output {output} would overwrite an input")
        return self

    @property
    def tile(self) -> TileConfig:
        return tile_for(self.schemes.group_size, self.tile_m, self.tile_n)


def _merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config_file(path: Path) -> dict[str, Any]:
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise UsageError(f"Config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"Config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise UsageError(f"Config file {path} must hold a JSON object")
    return payload


def build_run_config(flags: dict[str, Any], config_file: Path | None = None) -> RunConfig:
    """Merge defaults, the optional config file and explicitly given flags (None means not given)."""
    layered: dict[str, Any] = {}
    env_workers = os.environ.get(WORKERS_ENV)
    if env_workers:
        layered["workers"] = env_workers
    if config_file is not None:
        layered = _merge(layered, load_config_file(config_file))
    layered = _merge(layered, _drop_unset(flags))
    try:
        return RunConfig.model_validate(layered)
    except ValidationError as exc:
        first = exc.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or "config"
        raise UsageError(f"Invalid {location}: {first['msg']}") from exc


def _drop_unset(flags: dict[str, Any]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in flags.items():
        if isinstance(value, dict):
            nested = _drop_unset(value)
            if nested:
                out[key] = nested
        elif value is not None:
            out[key] = value
    return out
