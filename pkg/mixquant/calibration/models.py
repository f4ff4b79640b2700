"""Pydantic models for the calibration toy network."""

from __future__ import annotations

from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _frozen_f64(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


class ToyModel(BaseModel):
    """ReLU MLP without biases; weights[i] has shape (out_features, in_features).

    The final layer produces class logits scored with mean cross-entropy.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    weights: list[np.ndarray] = Field(..., min_length=1)
    layer_names: list[str] = Field(default_factory=list)
    sensitive_layer: int | None = None
    sensitivity: float = 1.0

    @model_validator(mode="before")
    @classmethod
    def _default_names(cls, data: Any) -> Any:
        if isinstance(data, dict) and not data.get("layer_names") and data.get("weights") is not None:
            data = {**data, "layer_names": [f"fc{i + 1}" for i in range(len(data["weights"]))]}
        return data

    @field_validator("weights", mode="before")
    @classmethod
    def _freeze(cls, value: list[np.ndarray]) -> list[np.ndarray]:
        return [_frozen_f64(w) for w in value]

    @model_validator(mode="after")
    def _check_chain(self) -> ToyModel:
        for i, w in enumerate(self.weights):
            if w.ndim != 2:
                raise ValueError(f"Layer {i} weight must be 2-D, got shape {w.shape}")
            if i and self.weights[i - 1].shape[0] != w.shape[1]:
                raise ValueError(
                    f"Layer {i} expects {w.shape[1]} inputs but layer {i - 1} produces {self.weights[i - 1].shape[0]}"
                )
        if len(self.layer_names) != len(self.weights):
            raise ValueError("One layer name per weight matrix is required")
        return self

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def num_classes(self) -> int:
        return int(self.weights[-1].shape[0])

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        return [(int(w.shape[0]), int(w.shape[1])) for w in self.weights]

    def with_weights(self, weights: list[np.ndarray]) -> ToyModel:
        return ToyModel(
            weights=weights,
            layer_names=self.layer_names,
            sensitive_layer=self.sensitive_layer,
            sensitivity=self.sensitivity,
        )


class CalibrationSet(BaseModel):
    """Calibration samples D: float64 inputs (n, d) and integer class targets (n,)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    inputs: np.ndarray
    targets: np.ndarray
    seed: int = 0

    @field_validator("inputs", mode="before")
    @classmethod
    def _freeze_inputs(cls, value: np.ndarray) -> np.ndarray:
        return _frozen_f64(np.atleast_2d(value))

    @field_validator("targets", mode="before")
    @classmethod
    def _freeze_targets(cls, value: np.ndarray) -> np.ndarray:
        out = np.array(value, dtype=np.int64, copy=True).reshape(-1)
        out.flags.writeable = False
        return out

    @model_validator(mode="after")
    def _check_samples(self) -> CalibrationSet:
        if self.inputs.shape[0] == 0:
            raise ValueError("Calibration set must not be empty")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError(f"{self.inputs.shape[0]} inputs but {self.targets.shape[0]} targets")
        return self

    @property
    def num_samples(self) -> int:
        return int(self.inputs.shape[0])


class ForwardResult(BaseModel):
    """Everything the backward pass needs from a forward pass."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    layer_inputs: list[np.ndarray]
    preactivations: list[np.ndarray]
    logits: np.ndarray
    sample_losses: np.ndarray
    loss: float


class GradientBundle(BaseModel):
    """Loss gradients w.r.t. every weight matrix.

    ``aggregated[i]`` is the mean over samples (same shape as W_i).
    ``per_sample[i]`` (optional) stacks one gradient per sample: (n, out, in).
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    aggregated: list[np.ndarray]
    per_sample: list[np.ndarray] | None = None
    loss: float
    num_samples: int

    @model_validator(mode="after")
    def _check_shapes(self) -> GradientBundle:
        if self.per_sample is not None:
            if len(self.per_sample) != len(self.aggregated):
                raise ValueError("per_sample must cover every layer")
            for i, (mean, stack) in enumerate(zip(self.aggregated, self.per_sample, strict=True)):
                if stack.shape != (self.num_samples, *mean.shape):
                    raise ValueError(f"Layer {i} per-sample gradients have shape {stack.shape}")
        return self
