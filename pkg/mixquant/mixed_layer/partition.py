"""Splitting layers into sub-problems, prepacking them and scattering outputs back."""

from __future__ import annotations

import time
from collections.abc import Sequence

import numpy as np
import structlog

from mixquant.calibration.models import ToyModel
from mixquant.errors import AssignmentError, UsageError
from mixquant.mixed_layer.models import MixedLinearLayer, PrepackedWeight, QuantizedModel
from mixquant.quant_core.models import ACTIVATION_SCHEME, LARGEBIT_SCHEME, SMALLBIT_SCHEME, QuantizedTensor, QuantScheme
from mixquant.quant_core.quantizer import dequantize_tensor, quantize_tensor
from mixquant.salience_search.models import PrecisionAssignment
from mixquant.tensor_store.models import DenseTensor

logger = structlog.get_logger()

DEFAULT_TILE_ROWS = 64

# (bit_width, symmetric) pairs whose step-1 values (code - z) fit in int8
ENGINE_WEIGHT_SCHEMES = frozenset({(4, False), (8, True)})


def prepack_weight(q: QuantizedTensor, tile_rows: int = DEFAULT_TILE_ROWS) -> PrepackedWeight:
    """Reorder codes, zero points and scales into row tiles of ``tile_rows``."""
    if tile_rows < 1:
        raise UsageError(f"tile_rows must be positive, got {tile_rows}")
    if (q.scheme.bit_width, q.scheme.symmetric) not in ENGINE_WEIGHT_SCHEMES:
        raise UsageError(f"The GEMM engine takes 4-bit asymmetric or 8-bit symmetric weights, got {q.scheme.label}")
    tiles = -(-q.rows // tile_rows)
    padded = tiles * tile_rows
    codes = np.zeros((padded, q.cols), dtype=np.int8)
    codes[: q.rows] = q.codes().astype(np.int16).astype(np.int8)
    zeros = np.zeros((padded, q.n_groups), dtype=np.int8)
    zeros[: q.rows] = q.zero_point_array().astype(np.int8)
    scales = np.zeros((padded, q.n_groups), dtype=np.float32)
    scales[: q.rows] = q.scale_array()
    return PrepackedWeight(
        tile_rows=tile_rows,
        rows=q.rows,
        group_size=q.scheme.group_size,
        bit_width=q.scheme.bit_width,
        codes=codes.reshape(tiles, tile_rows, q.cols),
        zero_points=zeros.reshape(tiles, tile_rows, q.n_groups),
        scales=scales.reshape(tiles, tile_rows, q.n_groups),
    )


def _check_promoted(promoted: Sequence[int], out_features: int, name: str) -> list[int]:
    rows = sorted(int(c) for c in promoted)
    if len(set(rows)) != len(rows):
        raise AssignmentError(f"Duplicate promoted channels for layer {name}")
    if rows and (rows[0] < 0 or rows[-1] >= out_features):
        raise AssignmentError(f"Promoted channels of {name} fall outside [0, {out_features})")
    return rows


def partition_and_quantize(
    weight: DenseTensor | np.ndarray,
    promoted: Sequence[int],
    *,
    name: str = "linear",
    smallbit: QuantScheme = SMALLBIT_SCHEME,
    largebit: QuantScheme = LARGEBIT_SCHEME,
    tile_rows: int = DEFAULT_TILE_ROWS,
) -> MixedLinearLayer:
    """Quantize promoted rows with ``largebit`` and the rest with ``smallbit``."""
    w = weight.array if isinstance(weight, DenseTensor) else np.asarray(weight, dtype=np.float64)
    if w.ndim != 2:
        raise UsageError(f"Layer {name} weight must be 2-D, got shape {w.shape}")
    if not smallbit.aligned_with(largebit):
        raise UsageError("Large-bit and small-bit schemes must share the group size")
    out_features, in_features = w.shape
    index8 = _check_promoted(promoted, out_features, name)
    index4 = sorted(set(range(out_features)) - set(index8))

    sub8 = quantize_tensor(w[index8], largebit) if index8 else None
    sub4 = quantize_tensor(w[index4], smallbit) if index4 else None
    return MixedLinearLayer(
        name=name,
        out_features=out_features,
        in_features=in_features,
        sub8=sub8,
        sub4=sub4,
        index_map8=index8,
        index_map4=index4,
        prepacked8=None if sub8 is None else prepack_weight(sub8, tile_rows),
        prepacked4=None if sub4 is None else prepack_weight(sub4, tile_rows),
    )


def reassemble_output(
    y8: np.ndarray | None,
    y4: np.ndarray | None,
    index_map8: Sequence[int],
    index_map4: Sequence[int],
) -> np.ndarray:
    """Scatter sub-problem output columns back to their original channel positions."""
    parts = [
        (None if y is None or not m else np.atleast_2d(np.asarray(y, dtype=np.float64)), list(m))
        for y, m in ((y8, index_map8), (y4, index_map4))
    ]
    total = len(index_map8) + len(index_map4)
    if sorted([*index_map8, *index_map4]) != list(range(total)):
        raise AssignmentError("Index maps overlap or leave output columns unwritten")

    rows = {y.shape[0] for y, m in parts if y is not None and m}
    if len(rows) > 1:
        raise UsageError(f"Sub-problem outputs disagree on row count: {sorted(rows)}")
    out = np.zeros((rows.pop() if rows else 0, total), dtype=np.float64)
    for y, index_map in parts:
        if not index_map:
            continue
        if y is None or y.shape[1] != len(index_map):
            raise UsageError(f"Output block needs {len(index_map)} columns to match its index map")
        out[:, index_map] = y
    return out


def check_assignment(assignment: PrecisionAssignment, model: ToyModel) -> None:
    if assignment.layer_names != list(model.layer_names):
        raise AssignmentError(f"Assignment covers layers {assignment.layer_names}, model has {model.layer_names}")
    widths = [shape[0] for shape in model.layer_shapes]
    if assignment.out_features != widths:
        raise AssignmentError(f"Assignment widths {assignment.out_features} differ from model widths {widths}")


def quantize_model(
    model: ToyModel,
    assignment: PrecisionAssignment,
    *,
    smallbit: QuantScheme = SMALLBIT_SCHEME,
    largebit: QuantScheme = LARGEBIT_SCHEME,
    act_scheme: QuantScheme = ACTIVATION_SCHEME,
    tile_rows: int = DEFAULT_TILE_ROWS,
    name: str = "toy",
) -> QuantizedModel:
    """Apply a precision assignment to every layer of a float toy model."""
    check_assignment(assignment, model)
    start = time.monotonic()
    layers = [
        partition_and_quantize(
            w, promoted, name=layer_name, smallbit=smallbit, largebit=largebit, tile_rows=tile_rows
        )
        for layer_name, w, promoted in zip(model.layer_names, model.weights, assignment.largebit, strict=True)
    ]
    logger.info(
        "mixed.quantize.done",
        layers=len(layers),
        largebit=assignment.n_largebit,
        channels=assignment.total_channels,
        elapsed_ms=round((time.monotonic() - start) * 1000, 2),
    )
    return QuantizedModel(model_name=name, layers=layers, act_scheme=act_scheme, percent=assignment.percent)


def dequantize_layer(layer: MixedLinearLayer) -> np.ndarray:
    """Float64 weight reconstructed from both sub-problems, rows in original order."""
    w8 = None if layer.sub8 is None else dequantize_tensor(layer.sub8).array.T
    w4 = None if layer.sub4 is None else dequantize_tensor(layer.sub4).array.T
    return reassemble_output(w8, w4, layer.index_map8, layer.index_map4).T.copy()
