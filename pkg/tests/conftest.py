"""Shared test fixtures."""

from __future__ import annotations

from collections.abc import Iterator
from pathlib import Path

import numpy as np
import pytest
from mixquant.calibration.dataset import make_synthetic_dataset
from mixquant.calibration.models import CalibrationSet, ToyModel
from mixquant.calibration.network import make_toy_model
from mixquant.log import configure_logging

DEFAULT_DIMS = [32, 64, 64, 8]


@pytest.fixture(autouse=True)
def _quiet_logging() -> Iterator[None]:
    configure_logging("warning")
    yield


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_model() -> ToyModel:
    return make_toy_model([12, 16, 10, 4], seed=3)


@pytest.fixture
def small_dataset(small_model: ToyModel) -> CalibrationSet:
    return make_synthetic_dataset(small_model.dims, 80, seed=5)


@pytest.fixture
def sensitive_model() -> ToyModel:
    return make_toy_model(DEFAULT_DIMS, seed=0, sensitive_layer=1, sensitivity=10.0)


@pytest.fixture
def default_dataset() -> CalibrationSet:
    return make_synthetic_dataset(DEFAULT_DIMS, 256, seed=0)


@pytest.fixture
def workdir(tmp_path: Path) -> Path:
    return tmp_path
