"""Toy models in the tensor_store format: linear layers interleaved with ReLU entries."""

from __future__ import annotations

from pathlib import Path

from mixquant.calibration.models import ToyModel
from mixquant.errors import ModelLoadError
from mixquant.tensor_store.models import DenseTensor, DType, LayerEntry, LayerKind, ModelManifest, TensorRef, tensor_key
from mixquant.tensor_store.storage import load_model, save_model

TOY_KIND = "toy-mlp"


def toy_manifest(model: ToyModel, name: str = "toy") -> ModelManifest:
    layers: list[LayerEntry] = []
    last = len(model.weights) - 1
    for i, (layer_name, w) in enumerate(zip(model.layer_names, model.weights, strict=True)):
        out_f, in_f = w.shape
        layers.append(
            LayerEntry(
                name=layer_name,
                kind=LayerKind.LINEAR,
                in_features=in_f,
                out_features=out_f,
                tensors={"weight": TensorRef(file=f"{layer_name}.weight.bin", dtype=DType.F64, shape=[out_f, in_f])},
            )
        )
        if i < last:
            layers.append(
                LayerEntry(
                    name=f"{layer_name}.relu",
                    kind=LayerKind.ACTIVATION_FN,
                    in_features=out_f,
                    out_features=out_f,
                    metadata={"fn": "relu"},
                )
            )
    metadata = {"kind": TOY_KIND, "sensitivity": model.sensitivity}
    if model.sensitive_layer is not None:
        metadata["sensitive_layer"] = model.sensitive_layer
    return ModelManifest(model_name=name, layers=layers, metadata=metadata)


def save_toy_model(model: ToyModel, path: str | Path, name: str = "toy") -> None:
    manifest = toy_manifest(model, name)
    tensors = {
        tensor_key(layer_name, "weight"): DenseTensor.from_array(w, DType.F64)
        for layer_name, w in zip(model.layer_names, model.weights, strict=True)
    }
    save_model(manifest, tensors, path)


def load_toy_model(path: str | Path) -> ToyModel:
    manifest, tensors = load_model(path)
    if manifest.metadata.get("kind") != TOY_KIND:
        raise ModelLoadError(f"{path} does not hold a float toy model (kind={manifest.metadata.get('kind')!r})")
    linear = manifest.linear_layers
    missing = [layer.name for layer in linear if tensor_key(layer.name, "weight") not in tensors]
    if missing:
        raise ModelLoadError(f"Linear layers without a weight tensor: {missing}")
    return ToyModel(
        weights=[tensors[tensor_key(layer.name, "weight")].array for layer in linear],
        layer_names=[layer.name for layer in linear],
        sensitive_layer=manifest.metadata.get("sensitive_layer"),
        sensitivity=float(manifest.metadata.get("sensitivity", 1.0)),
    )
