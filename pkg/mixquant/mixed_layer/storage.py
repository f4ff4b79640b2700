"""Quantized models in the tensor_store format.

Each linear entry carries up to seven tensors: ``codes8`` (i8), ``scales8``,
``index8`` (i32) for the large-bit rows and ``codes4`` (u4-packed),
``scales4``, ``zeros4`` (u8), ``index4`` for the small-bit rows. The
tile-major prepacked layout is derived again on load.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from mixquant.errors import ModelLoadError, UsageError
from mixquant.mixed_layer.models import MixedLinearLayer, QuantizedModel
from mixquant.mixed_layer.partition import DEFAULT_TILE_ROWS, prepack_weight
from mixquant.quant_core.models import QuantizedTensor, QuantScheme
from mixquant.tensor_store.models import DenseTensor, DType, LayerEntry, LayerKind, ModelManifest, TensorRef, tensor_key
from mixquant.tensor_store.storage import load_model, save_model

QUANTIZED_KIND = "mixed-quantized"


def _sub_tensors(layer: MixedLinearLayer) -> dict[str, DenseTensor]:
    tensors: dict[str, DenseTensor] = {}
    for bits, sub, index_map, _ in layer.subproblems():
        tensors[f"codes{bits}"] = sub.payload
        tensors[f"scales{bits}"] = sub.scales
        tensors[f"index{bits}"] = DenseTensor.from_array(np.asarray(index_map), DType.I32)
        if sub.zero_points is not None:
            tensors[f"zeros{bits}"] = sub.zero_points
    return tensors


def save_quantized_model(model: QuantizedModel, path: str | Path) -> None:
    entries: list[LayerEntry] = []
    tensors: dict[str, DenseTensor] = {}
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        layer_tensors = _sub_tensors(layer)
        schemes: dict[str, Any] = {}
        for bits, sub, _, _ in layer.subproblems():
            schemes[f"scheme{bits}"] = sub.scheme.model_dump(mode="json")
        entries.append(
            LayerEntry(
                name=layer.name,
                kind=LayerKind.LINEAR,
                in_features=layer.in_features,
                out_features=layer.out_features,
                tensors={
                    role: TensorRef(file=f"{layer.name}.{role}.bin", dtype=t.dtype, shape=t.shape)
                    for role, t in layer_tensors.items()
                },
                metadata={"largebit": len(layer.index_map8), "smallbit": len(layer.index_map4), **schemes},
            )
        )
        tensors.update({tensor_key(layer.name, role): t for role, t in layer_tensors.items()})
        if i < last:
            entries.append(
                LayerEntry(
                    name=f"{layer.name}.relu",
                    kind=LayerKind.ACTIVATION_FN,
                    in_features=layer.out_features,
                    out_features=layer.out_features,
                    metadata={"fn": "relu"},
                )
            )
    metadata = {
        "kind": QUANTIZED_KIND,
        "act_scheme": model.act_scheme.model_dump(mode="json"),
        "percent": model.percent,
        **model.metadata,
    }
    save_model(ModelManifest(model_name=model.model_name, layers=entries, metadata=metadata), tensors, path)


def _load_sub(
    entry: LayerEntry, tensors: dict[str, DenseTensor], bits: int
) -> tuple[QuantizedTensor | None, list[int]]:
    key = tensor_key(entry.name, f"codes{bits}")
    if key not in tensors:
        return None, []
    index_map = [int(i) for i in tensors[tensor_key(entry.name, f"index{bits}")].array]
    scheme = QuantScheme.model_validate(entry.metadata[f"scheme{bits}"])
    sub = QuantizedTensor(
        shape=(len(index_map), entry.in_features),
        scheme=scheme,
        payload=tensors[key],
        scales=tensors[tensor_key(entry.name, f"scales{bits}")],
        zero_points=tensors.get(tensor_key(entry.name, f"zeros{bits}")),
    )
    return sub, index_map


def load_quantized_model(path: str | Path, *, tile_rows: int = DEFAULT_TILE_ROWS) -> QuantizedModel:
    manifest, tensors = load_model(path)
    if manifest.metadata.get("kind") != QUANTIZED_KIND:
        raise ModelLoadError(f"{path} does not hold a quantized model (kind={manifest.metadata.get('kind')!r})")
    try:
        layers: list[MixedLinearLayer] = []
        for entry in manifest.linear_layers:
            sub8, map8 = _load_sub(entry, tensors, 8)
            sub4, map4 = _load_sub(entry, tensors, 4)
            layers.append(
                MixedLinearLayer(
                    name=entry.name,
                    out_features=entry.out_features,
                    in_features=entry.in_features,
                    sub8=sub8,
                    sub4=sub4,
                    index_map8=map8,
                    index_map4=map4,
                    prepacked8=None if sub8 is None else prepack_weight(sub8, tile_rows),
                    prepacked4=None if sub4 is None else prepack_weight(sub4, tile_rows),
                )
            )
        extra = {k: v for k, v in manifest.metadata.items() if k not in {"kind", "act_scheme", "percent"}}
        return QuantizedModel(
            model_name=manifest.model_name,
            layers=layers,
            act_scheme=QuantScheme.model_validate(manifest.metadata["act_scheme"]),
            percent=manifest.metadata.get("percent"),
            metadata=extra,
        )
    except (KeyError, UsageError, ValidationError) as exc:
        raise ModelLoadError(f"Inconsistent quantized model at {path}: {exc}") from exc
