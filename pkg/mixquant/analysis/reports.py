"""Precision distribution and proxy-quality evaluation."""

from __future__ import annotations

import re
import time
from collections.abc import Sequence

import numpy as np
import structlog

from mixquant.analysis.models import (
    ClassDistribution,
    DistributionReport,
    EstimatorComparison,
    LayerDistribution,
    ProxyReport,
)
from mixquant.calibration.models import CalibrationSet, GradientBundle, ToyModel
from mixquant.calibration.network import cross_entropy, forward_logits
from mixquant.errors import AssignmentError, DataError
from mixquant.gemm_engine.engine import GemmEngine
from mixquant.mixed_layer.models import QuantizedModel
from mixquant.mixed_layer.partition import quantize_model
from mixquant.quant_core.models import SMALLBIT_SCHEME, QuantScheme
from mixquant.salience_search.models import PrecisionAssignment, SalienceEstimator
from mixquant.salience_search.search import global_search

logger = structlog.get_logger()


def layer_class(name: str) -> str:
    """Name with block indices removed: ``layers.3.q_proj`` -> ``layers.q_proj``, ``fc2`` -> ``fc``."""
    parts = [re.sub(r"\d+$", "", part) for part in name.split(".") if not part.isdigit()]
    return ".".join(part for part in parts if part) or name


def distribution_report(
    assignment: PrecisionAssignment, layer_names: Sequence[str] | None = None
) -> DistributionReport:
    """Per-layer and per-class share of large-bit output channels."""
    if layer_names is not None and list(layer_names) != assignment.layer_names:
        raise AssignmentError(f"Assignment covers {assignment.layer_names}, model has {list(layer_names)}")
    layers = [
        LayerDistribution(name=name, layer_class=layer_class(name), channels=width, promoted=len(large))
        for name, width, large in zip(assignment.layer_names, assignment.out_features, assignment.largebit, strict=True)
    ]
    grouped: dict[str, list[LayerDistribution]] = {}
    for layer in layers:
        grouped.setdefault(layer.layer_class, []).append(layer)
    classes = [
        ClassDistribution(
            layer_class=cls,
            layers=len(members),
            channels=sum(m.channels for m in members),
            promoted=sum(m.promoted for m in members),
            average_percent=sum(m.percent for m in members) / len(members),
        )
        for cls, members in grouped.items()
    ]
    total = sum(layer.channels for layer in layers)
    return DistributionReport(
        layers=layers,
        classes=classes,
        global_percent=sum(layer.promoted for layer in layers) / total,
    )


def _logits(quantized: ToyModel | QuantizedModel, inputs: np.ndarray, engine: GemmEngine | None) -> np.ndarray:
    if isinstance(quantized, ToyModel):
        return forward_logits(quantized, inputs)
    return (engine or GemmEngine()).forward(quantized, inputs)


def proxy_eval(
    model: ToyModel,
    quantized: ToyModel | QuantizedModel,
    dataset: CalibrationSet,
    engine: GemmEngine | None = None,
) -> ProxyReport:
    """Loss delta and logit MSE of a quantized model against its float source.

    A float ``ToyModel`` as ``quantized`` is evaluated in float64 (fake
    quantization); a ``QuantizedModel`` runs through the GEMM engine.
    """
    if model.dims != quantized.dims:
        raise DataError(f"Float model dims {model.dims} differ from quantized dims {quantized.dims}")
    start = time.monotonic()
    ref = forward_logits(model, dataset.inputs)
    out = _logits(quantized, dataset.inputs, engine)
    if dataset.targets.max() >= model.num_classes:
        raise DataError(f"Targets must lie in [0, {model.num_classes})")
    loss_f = cross_entropy(ref, dataset.targets)
    loss_q = cross_entropy(out, dataset.targets)
    diff = loss_q - loss_f
    report = ProxyReport(
        samples=dataset.num_samples,
        float_loss=float(loss_f.mean()),
        quantized_loss=float(loss_q.mean()),
        loss_delta=float(np.abs(diff).mean()),
        mean_loss_shift=float(diff.mean()),
        logit_mse=float(np.mean((out - ref) ** 2)),
    )
    logger.info(
        "analysis.proxy.done",
        samples=report.samples,
        loss_delta=report.loss_delta,
        logit_mse=report.logit_mse,
        elapsed_ms=round((time.monotonic() - start) * 1000, 2),
    )
    return report


def compare_estimators(
    model: ToyModel,
    dataset: CalibrationSet,
    gradients: GradientBundle,
    percent: float,
    *,
    smallbit: QuantScheme = SMALLBIT_SCHEME,
    estimators: Sequence[SalienceEstimator] = tuple(SalienceEstimator),
) -> list[EstimatorComparison]:
    """Global search once per estimator at the same budget, best loss delta first."""
    rows: list[EstimatorComparison] = []
    for estimator in estimators:
        assignment = global_search(model, gradients, smallbit, percent, estimator=estimator)
        proxy = proxy_eval(model, quantize_model(model, assignment, smallbit=smallbit), dataset)
        rows.append(
            EstimatorComparison(
                estimator=estimator,
                promoted=[len(layer) for layer in assignment.largebit],
                proxy=proxy,
            )
        )
    ranked = sorted(rows, key=lambda row: row.proxy.loss_delta)
    logger.info(
        "analysis.estimators.done",
        percent=percent,
        order=[row.estimator.value for row in ranked],
        loss_delta=[row.proxy.loss_delta for row in ranked],
    )
    return ranked
