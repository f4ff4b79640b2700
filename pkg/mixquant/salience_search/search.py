"""Global precision search.

For every linear layer: W_delta = quantize(W) - W under the small-bit
scheme, t = G . W_delta per output channel, S = |t + t^2 / 2|. All
(layer, channel, S) tuples are sorted together, descending, and the first
N_largebit are promoted. Ties keep (layer_id, channel_id) ascending.

Two reduced estimators are kept for comparison: ``second-order`` drops the
first-order term (S = t^2 / 2) and ``fisher-diag`` replaces the row dot
product by a diagonal Fisher, S = sum_j g_j^2 delta_j^2 / 2.
"""

from __future__ import annotations

import math
import time
from collections.abc import Sequence

import numpy as np
import structlog

from mixquant.calibration.models import CalibrationSet, GradientBundle, ToyModel
from mixquant.calibration.network import forward
from mixquant.calibration.prng import permutation
from mixquant.errors import DataError, UsageError
from mixquant.quant_core.models import QuantScheme
from mixquant.quant_core.quantizer import fake_quantize
from mixquant.salience_search.models import (
    ChannelSalience,
    PrecisionAssignment,
    SalienceEstimator,
    SalienceMode,
    SearchStrategy,
)

logger = structlog.get_logger()


def largebit_budget(percent: float, total_channels: int) -> int:
    """N_largebit = round(percent * total), halves rounded up."""
    if not 0.0 <= percent <= 1.0 or math.isnan(percent):
        raise UsageError(f"percent must lie in [0, 1], got {percent}")
    return min(total_channels, int(math.floor(percent * total_channels + 0.5)))


def weight_deltas(model: ToyModel, smallbit: QuantScheme) -> list[np.ndarray]:
    """quantize(W_i) - W_i for every layer, under the small-bit scheme."""
    return [fake_quantize(w, smallbit) - w for w in model.weights]


def _scores(grad: np.ndarray, delta: np.ndarray, subscripts: str, estimator: SalienceEstimator) -> np.ndarray:
    if estimator == SalienceEstimator.FISHER_DIAG:
        return 0.5 * np.einsum(subscripts, grad * grad, delta * delta)
    t = np.einsum(subscripts, grad, delta)
    if estimator == SalienceEstimator.SECOND_ORDER:
        return 0.5 * t * t
    return np.abs(t + 0.5 * t * t)


def layer_salience(
    grad: np.ndarray,
    delta: np.ndarray,
    mode: SalienceMode | str = SalienceMode.AGGREGATED,
    estimator: SalienceEstimator | str = SalienceEstimator.TAYLOR,
) -> np.ndarray:
    """Salience of every output channel of one layer.

    aggregated: ``grad`` is G_i (out, in); S = |t + t^2/2| with t = G_row . delta_row.
    per-sample: ``grad`` stacks g_d (n, out, in); S = mean_d |t_d + t_d^2/2|.
    """
    mode = SalienceMode(mode)
    estimator = SalienceEstimator(estimator)
    grad = np.asarray(grad, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if mode == SalienceMode.AGGREGATED:
        if grad.shape != delta.shape:
            raise DataError(f"Gradient shape {grad.shape} does not match weight shape {delta.shape}")
        return _scores(grad, delta, "oi,oi->o", estimator)
    if grad.ndim != 3 or grad.shape[1:] != delta.shape:
        raise DataError(f"Per-sample gradients {grad.shape} do not match weight shape {delta.shape}")
    return _scores(grad, delta, "noi,oi->no", estimator).mean(axis=0)


def channel_salience(
    g: Sequence[float] | np.ndarray,
    delta: Sequence[float] | np.ndarray,
    mode: SalienceMode | str = SalienceMode.AGGREGATED,
    estimator: SalienceEstimator | str = SalienceEstimator.TAYLOR,
) -> float:
    """Salience of one channel; ``g`` is a vector (aggregated) or one row per sample (per-sample)."""
    mode = SalienceMode(mode)
    g_arr = np.asarray(g, dtype=np.float64)
    d_arr = np.asarray(delta, dtype=np.float64).reshape(-1)
    if g_arr.shape[-1] != d_arr.size:
        raise UsageError(f"Gradient length {g_arr.shape[-1]} differs from delta length {d_arr.size}")
    if mode == SalienceMode.AGGREGATED:
        if g_arr.ndim != 1:
            raise UsageError("Aggregated salience takes a single gradient vector")
        return float(layer_salience(g_arr.reshape(1, -1), d_arr.reshape(1, -1), mode, estimator)[0])
    samples = np.atleast_2d(g_arr)
    return float(layer_salience(samples[:, None, :], d_arr.reshape(1, -1), mode, estimator)[0])


def _gradients_for(gradients: GradientBundle, mode: SalienceMode) -> list[np.ndarray]:
    if mode == SalienceMode.AGGREGATED:
        return gradients.aggregated
    if gradients.per_sample is None:
        raise UsageError("Per-sample salience needs gradients computed in per-sample mode")
    return gradients.per_sample


def rank_channels(
    model: ToyModel,
    gradients: GradientBundle,
    smallbit: QuantScheme,
    mode: SalienceMode | str = SalienceMode.AGGREGATED,
    estimator: SalienceEstimator | str = SalienceEstimator.TAYLOR,
) -> list[ChannelSalience]:
    """Salience of every channel of every layer, sorted descending with deterministic tie-break."""
    mode = SalienceMode(mode)
    grads = _gradients_for(gradients, mode)
    if len(grads) != len(model.weights):
        raise DataError(f"Gradients cover {len(grads)} layers, model has {len(model.weights)}")

    layer_ids: list[np.ndarray] = []
    channel_ids: list[np.ndarray] = []
    scores: list[np.ndarray] = []
    for i, (grad, delta) in enumerate(zip(grads, weight_deltas(model, smallbit), strict=True)):
        s = layer_salience(grad, delta, mode, estimator)
        layer_ids.append(np.full(s.size, i, dtype=np.int64))
        channel_ids.append(np.arange(s.size, dtype=np.int64))
        scores.append(s)

    layer_col = np.concatenate(layer_ids)
    channel_col = np.concatenate(channel_ids)
    score_col = np.concatenate(scores)
    order = np.lexsort((channel_col, layer_col, -score_col))
    return [
        ChannelSalience(layer_id=int(layer_col[k]), channel_id=int(channel_col[k]), salience=float(score_col[k]))
        for k in order
    ]


def sort_salience(entries: Sequence[ChannelSalience]) -> list[ChannelSalience]:
    """Descending salience; ties by (layer_id, channel_id) ascending."""
    return sorted(entries, key=lambda e: (-e.salience, e.layer_id, e.channel_id))


def assignment_from_ranking(
    ranking: Sequence[ChannelSalience],
    layer_names: Sequence[str],
    out_features: Sequence[int],
    percent: float,
    *,
    strategy: SearchStrategy = SearchStrategy.GLOBAL,
    salience_mode: SalienceMode | None = SalienceMode.AGGREGATED,
    estimator: SalienceEstimator | None = SalienceEstimator.TAYLOR,
) -> PrecisionAssignment:
    """Promote the first N_largebit entries of an already ordered channel list."""
    n_large = largebit_budget(percent, len(ranking))
    large: list[list[int]] = [[] for _ in layer_names]
    for entry in ranking[:n_large]:
        large[entry.layer_id].append(entry.channel_id)
    large = [sorted(channels) for channels in large]
    small = [sorted(set(range(width)) - set(chosen)) for width, chosen in zip(out_features, large, strict=True)]
    return PrecisionAssignment(
        percent=percent,
        n_largebit=n_large,
        layer_names=list(layer_names),
        out_features=list(out_features),
        largebit=large,
        smallbit=small,
        strategy=strategy,
        salience_mode=salience_mode,
        estimator=estimator,
    )


def global_search(
    model: ToyModel,
    gradients: GradientBundle,
    smallbit: QuantScheme,
    percent: float,
    mode: SalienceMode | str = SalienceMode.AGGREGATED,
    *,
    estimator: SalienceEstimator | str = SalienceEstimator.TAYLOR,
) -> PrecisionAssignment:
    """One-pass global search: rank all channels of all layers, promote the top N_largebit."""
    mode = SalienceMode(mode)
    estimator = SalienceEstimator(estimator)
    largebit_budget(percent, 1)
    for i, (w, g) in enumerate(zip(model.weights, gradients.aggregated, strict=False)):
        if w.shape != g.shape:
            raise DataError(f"Layer {i}: weight {w.shape} and gradient {g.shape} differ")
    start = time.monotonic()
    ranking = rank_channels(model, gradients, smallbit, mode, estimator)
    out_features = [shape[0] for shape in model.layer_shapes]
    assignment = assignment_from_ranking(
        ranking, model.layer_names, out_features, percent, salience_mode=mode, estimator=estimator
    )
    logger.info(
        "salience.search.done",
        strategy="global",
        mode=mode.value,
        estimator=estimator.value,
        percent=percent,
        n_largebit=assignment.n_largebit,
        channels=assignment.total_channels,
        elapsed_ms=round((time.monotonic() - start) * 1000, 2),
    )
    return assignment


def local_search(
    model: ToyModel,
    gradients: GradientBundle,
    smallbit: QuantScheme,
    percent: float,
    mode: SalienceMode | str = SalienceMode.AGGREGATED,
    *,
    estimator: SalienceEstimator | str = SalienceEstimator.TAYLOR,
) -> PrecisionAssignment:
    """Layer-local baseline: promote the same fraction of channels inside every layer."""
    mode = SalienceMode(mode)
    estimator = SalienceEstimator(estimator)
    ranking = rank_channels(model, gradients, smallbit, mode, estimator)
    out_features = [shape[0] for shape in model.layer_shapes]
    large: list[list[int]] = []
    for i, width in enumerate(out_features):
        quota = largebit_budget(percent, width)
        in_layer = [entry.channel_id for entry in ranking if entry.layer_id == i]
        large.append(sorted(in_layer[:quota]))
    small = [sorted(set(range(width)) - set(chosen)) for width, chosen in zip(out_features, large, strict=True)]
    return PrecisionAssignment(
        percent=percent,
        n_largebit=sum(len(chosen) for chosen in large),
        layer_names=list(model.layer_names),
        out_features=out_features,
        largebit=large,
        smallbit=small,
        strategy=SearchStrategy.LOCAL,
        salience_mode=mode,
        estimator=estimator,
    )


def random_assignment(
    layer_names: Sequence[str], out_features: Sequence[int], percent: float, seed: int
) -> PrecisionAssignment:
    """Promote a seeded random subset of the same global size N_largebit."""
    total = sum(out_features)
    order = permutation(seed, total)
    offsets = np.cumsum([0, *out_features])
    layer_of = np.searchsorted(offsets, order, side="right") - 1
    ranking = [
        ChannelSalience(layer_id=int(layer), channel_id=int(flat - offsets[layer]), salience=0.0)
        for flat, layer in zip(order, layer_of, strict=True)
    ]
    return assignment_from_ranking(
        ranking,
        layer_names,
        out_features,
        percent,
        strategy=SearchStrategy.RANDOM,
        salience_mode=None,
        estimator=None,
    )


def loss_delta_salience(
    model: ToyModel,
    dataset: CalibrationSet,
    smallbit: QuantScheme,
    layer_id: int,
    channel_id: int,
    *,
    base_loss: float | None = None,
) -> float:
    """Brute-force |l(c_q) - l(c_0)|: quantize one channel alone and re-evaluate the loss."""
    if base_loss is None:
        base_loss = forward(model, dataset).loss
    weights = [w.copy() for w in model.weights]
    row = weights[layer_id][channel_id : channel_id + 1]
    weights[layer_id][channel_id] = fake_quantize(row, smallbit)[0]
    return abs(forward(model.with_weights(weights), dataset).loss - base_loss)


def loss_delta_ranking(model: ToyModel, dataset: CalibrationSet, smallbit: QuantScheme) -> list[ChannelSalience]:
    """Every channel scored by :func:`loss_delta_salience`, ordered like :func:`rank_channels`."""
    base = forward(model, dataset).loss
    entries = [
        ChannelSalience(
            layer_id=i,
            channel_id=c,
            salience=loss_delta_salience(model, dataset, smallbit, i, c, base_loss=base),
        )
        for i, w in enumerate(model.weights)
        for c in range(w.shape[0])
    ]
    return sort_salience(entries)
