"""Synthetic calibration data drawn from the portable PRNG."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import structlog

from mixquant.calibration.models import CalibrationSet
from mixquant.calibration.prng import derive_seed, normal_matrix
from mixquant.errors import UsageError

logger = structlog.get_logger()


def make_synthetic_dataset(dims: Sequence[int], num_samples: int, seed: int) -> CalibrationSet:
    """Standard-normal inputs of width dims[0]; targets are argmax of a fixed random labelling projection
    onto dims[-1] classes."""
    if num_samples < 1:
        raise UsageError(f"num_samples must be >= 1, got {num_samples}")
    if len(dims) < 2:
        raise UsageError(f"dims needs an input width and a class count, got {list(dims)}")
    in_dim, num_classes = int(dims[0]), int(dims[-1])
    inputs = normal_matrix(derive_seed(seed, 10), num_samples, in_dim)
    labeller = normal_matrix(derive_seed(seed, 11), num_classes, in_dim)
    targets = np.argmax(inputs @ labeller.T, axis=1)
    logger.debug("calibration.dataset.create", samples=num_samples, in_dim=in_dim, classes=num_classes, seed=seed)
    return CalibrationSet(inputs=inputs, targets=targets, seed=seed)
