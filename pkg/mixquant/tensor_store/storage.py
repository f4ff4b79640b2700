"""On-disk model format: one UTF-8 JSON manifest plus one raw little-endian file per tensor."""

from __future__ import annotations

import json
import math
import time
from collections.abc import Mapping
from pathlib import Path

import structlog
from pydantic import ValidationError

from mixquant.errors import DataError, ModelLoadError
from mixquant.tensor_store.models import DenseTensor, ModelManifest, payload_size, tensor_key

logger = structlog.get_logger()

MANIFEST_NAME = "manifest.json"


def save_model(manifest: ModelManifest, tensors: Mapping[str, DenseTensor], path: str | Path) -> None:
    """Write ``manifest`` and every tensor it references under directory ``path``.

    ``tensors`` is keyed by :func:`tensor_key` (``"<layer>/<role>"``).
    """
    start = time.monotonic()
    root = Path(path)

    # Validate everything before the first byte is written.
    pending: list[tuple[Path, bytes]] = []
    for layer in manifest.layers:
        for role, ref in layer.tensors.items():
            key = tensor_key(layer.name, role)
            tensor = tensors.get(key)
            if tensor is None:
                raise DataError(f"No tensor supplied for {key} (layer {layer.name})")
            if tensor.dtype != ref.dtype or tensor.shape != ref.shape:
                raise DataError(
                    f"Tensor {key} is {tensor.dtype.value}{tensor.shape}, "
                    f"manifest declares {ref.dtype.value}{ref.shape}"
                )
            pending.append((root / ref.file, tensor.data))

    root.mkdir(parents=True, exist_ok=True)
    for file_path, data in pending:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        file_path.write_bytes(data)
    manifest_text = json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True)
    (root / MANIFEST_NAME).write_text(manifest_text + "\n", encoding="utf-8")

    logger.info(
        "store.save",
        path=str(root),
        model=manifest.model_name,
        tensors=len(pending),
        elapsed_ms=round((time.monotonic() - start) * 1000, 2),
    )


def load_manifest(path: str | Path) -> ModelManifest:
    manifest_path = Path(path) / MANIFEST_NAME
    if not manifest_path.is_file():
        raise ModelLoadError(f"Missing manifest: {manifest_path}")
    try:
        return ModelManifest.model_validate_json(manifest_path.read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise ModelLoadError(f"Invalid manifest {manifest_path}: {exc.errors()[0]['msg']}") from exc


def load_model(path: str | Path) -> tuple[ModelManifest, dict[str, DenseTensor]]:
    """Read a model directory back; every referenced file must exist with the declared size."""
    root = Path(path)
    manifest = load_manifest(root)
    tensors: dict[str, DenseTensor] = {}

    for layer in manifest.layers:
        for role, ref in layer.tensors.items():
            file_path = root / ref.file
            if not file_path.is_file():
                raise ModelLoadError(f"Missing tensor file {ref.file} for layer {layer.name} ({role})")
            data = file_path.read_bytes()
            expected = payload_size(ref.dtype, math.prod(ref.shape))
            if len(data) != expected:
                raise ModelLoadError(
                    f"Shape mismatch for layer {layer.name} ({role}): {ref.file} holds {len(data)} bytes, "
                    f"declared {ref.dtype.value}{ref.shape} needs {expected}"
                )
            tensors[tensor_key(layer.name, role)] = DenseTensor(shape=ref.shape, dtype=ref.dtype, data=data)

    logger.info("store.load", path=str(root), model=manifest.model_name, tensors=len(tensors))
    return manifest, tensors
