"""Forward and analytic backward passes of the toy ReLU network.

Everything runs in float64. Samples are processed in fixed chunks of
``GRADIENT_CHUNK`` and chunk results are reduced in chunk order, so the
aggregated gradient does not depend on the worker count.
"""

from __future__ import annotations

import math
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from enum import Enum

import numpy as np
import structlog

from mixquant.calibration.models import CalibrationSet, ForwardResult, GradientBundle, ToyModel
from mixquant.calibration.prng import XorShift64Star, derive_seed, normal_matrix
from mixquant.errors import DataError, UsageError

logger = structlog.get_logger()

GRADIENT_CHUNK = 64


class GradientMode(str, Enum):  # noqa: UP042
    AGGREGATED = "aggregated"
    PER_SAMPLE = "per-sample"


def make_toy_model(
    dims: Sequence[int],
    seed: int,
    *,
    sensitive_layer: int | None = None,
    sensitivity: float = 10.0,
    group_size: int = 128,
) -> ToyModel:
    """He-initialised MLP with ``len(dims) - 1`` linear layers.

    The optional sensitive layer gets one outlier per row and quantization
    group, ``sensitivity`` times the largest magnitude in that group, which
    widens its 4-bit grid relative to every other layer. The outliers sit on
    one carrier column per group. Past the first layer the carrier's input
    unit is disabled in the previous layer, so the outliers add nothing to the
    float output; the model still differs from a plain one with the same seed
    because those units are gone. In layer 0 the carriers read real inputs and
    the float function changes with them.
    """
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise UsageError(f"dims must list at least two positive widths, got {list(dims)}")
    n_layers = len(dims) - 1
    if sensitive_layer is not None and not 0 <= sensitive_layer < n_layers:
        raise UsageError(f"sensitive_layer {sensitive_layer} outside [0, {n_layers})")

    weights: list[np.ndarray] = []
    for i in range(n_layers):
        fan_in, fan_out = dims[i], dims[i + 1]
        weights.append(normal_matrix(derive_seed(seed, 1, i), fan_out, fan_in) * math.sqrt(2.0 / fan_in))

    if sensitive_layer is not None:
        carriers = _carrier_columns(dims[sensitive_layer], derive_seed(seed, 2, sensitive_layer), group_size)
        weights[sensitive_layer] = _inject_outliers(weights[sensitive_layer], carriers, sensitivity, group_size)
        if sensitive_layer > 0:
            # zero the units feeding the carriers so the outliers never reach the float output
            weights[sensitive_layer - 1][carriers, :] = 0.0

    logger.info("calibration.model.create", dims=list(dims), seed=seed, sensitive_layer=sensitive_layer)
    return ToyModel(
        weights=weights,
        sensitive_layer=sensitive_layer,
        sensitivity=sensitivity if sensitive_layer is not None else 1.0,
    )


def _carrier_columns(cols: int, seed: int, group_size: int) -> np.ndarray:
    """One seeded column per quantization group."""
    starts = np.arange(0, cols, group_size)
    sizes = np.minimum(group_size, cols - starts)
    picks = XorShift64Star(seed).uniform(starts.size)[0]
    return starts + np.minimum((picks * sizes).astype(np.int64), sizes - 1)


def _inject_outliers(w: np.ndarray, carriers: np.ndarray, factor: float, group_size: int) -> np.ndarray:
    """Set each row's carrier weight to ``factor`` times the largest magnitude of its group."""
    out = w.copy()
    rows = np.arange(w.shape[0])
    for col in carriers:
        start = (col // group_size) * group_size
        peak = np.abs(w[:, start : start + group_size]).max(axis=1)
        sign = np.where(w[rows, col] < 0, -1.0, 1.0)
        out[rows, col] = sign * factor * peak
    return out


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-sample cross-entropy, numerically stable."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    return log_norm - shifted[np.arange(logits.shape[0]), targets]


def _check_input(model: ToyModel, inputs: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if x.shape[1] != model.dims[0]:
        raise DataError(f"Input has {x.shape[1]} features, model expects {model.dims[0]}")
    return x


def forward_logits(model: ToyModel, inputs: np.ndarray) -> np.ndarray:
    h = _check_input(model, inputs)
    for i, w in enumerate(model.weights):
        h = h @ w.T
        if i < len(model.weights) - 1:
            h = np.maximum(h, 0.0)
    return h


def forward(model: ToyModel, dataset: CalibrationSet) -> ForwardResult:
    """Forward pass keeping each layer's input and pre-activation; loss is the batch mean."""
    h = _check_input(model, dataset.inputs)
    if dataset.targets.max() >= model.num_classes or dataset.targets.min() < 0:
        raise DataError(f"Targets must lie in [0, {model.num_classes})")
    layer_inputs: list[np.ndarray] = []
    preactivations: list[np.ndarray] = []
    for i, w in enumerate(model.weights):
        layer_inputs.append(h)
        z = h @ w.T
        preactivations.append(z)
        h = np.maximum(z, 0.0) if i < len(model.weights) - 1 else z
    sample_losses = cross_entropy(h, dataset.targets)
    return ForwardResult(
        layer_inputs=layer_inputs,
        preactivations=preactivations,
        logits=h,
        sample_losses=sample_losses,
        loss=float(sample_losses.mean()),
    )


def _output_errors(model: ToyModel, fwd: ForwardResult, targets: np.ndarray) -> list[np.ndarray]:
    """Per-sample dl_d/dz_i for every layer (not divided by the batch size)."""
    shifted = fwd.logits - fwd.logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    probs[np.arange(probs.shape[0]), targets] -= 1.0

    errors: list[np.ndarray] = [probs]
    for i in range(len(model.weights) - 1, 0, -1):
        upstream = errors[0] @ model.weights[i]
        errors.insert(0, upstream * (fwd.preactivations[i - 1] > 0.0))
    return errors


def _chunk_gradients(
    model: ToyModel, dataset: CalibrationSet, rows: slice, per_sample: bool
) -> tuple[list[np.ndarray], list[np.ndarray] | None, float]:
    chunk = CalibrationSet(inputs=dataset.inputs[rows], targets=dataset.targets[rows], seed=dataset.seed)
    fwd = forward(model, chunk)
    errors = _output_errors(model, fwd, chunk.targets)
    sums = [err.T @ inp for err, inp in zip(errors, fwd.layer_inputs, strict=True)]
    stacks = None
    if per_sample:
        stacks = [np.einsum("no,ni->noi", err, inp) for err, inp in zip(errors, fwd.layer_inputs, strict=True)]
    return sums, stacks, float(fwd.sample_losses.sum())


def compute_gradients(
    model: ToyModel,
    dataset: CalibrationSet,
    mode: GradientMode | str = GradientMode.AGGREGATED,
    *,
    workers: int = 1,
) -> GradientBundle:
    """Exact gradients of the mean cross-entropy w.r.t. every weight matrix."""
    mode = GradientMode(mode)
    _check_input(model, dataset.inputs)
    start = time.monotonic()
    n = dataset.num_samples
    chunks = [slice(s, min(s + GRADIENT_CHUNK, n)) for s in range(0, n, GRADIENT_CHUNK)]
    per_sample = mode == GradientMode.PER_SAMPLE

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(lambda rows: _chunk_gradients(model, dataset, rows, per_sample), chunks))

    totals = [np.zeros_like(w) for w in model.weights]
    loss_sum = 0.0
    for sums, _, chunk_loss in results:
        for total, part in zip(totals, sums, strict=True):
            total += part
        loss_sum += chunk_loss

    stacked = None
    if per_sample:
        stacked = [np.concatenate([r[1][i] for r in results if r[1] is not None]) for i in range(len(totals))]

    logger.info(
        "calibration.gradients.done",
        mode=mode.value,
        samples=n,
        chunks=len(chunks),
        workers=workers,
        elapsed_ms=round((time.monotonic() - start) * 1000, 2),
    )
    return GradientBundle(
        aggregated=[total / n for total in totals],
        per_sample=stacked,
        loss=loss_sum / n,
        num_samples=n,
    )
