"""Experiment configuration documents (YAML) with a strict schema."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

import yaml
from pydantic import (BaseModel, ConfigDict, Field, ValidationError, field_validator,
                      model_validator)

from .exceptions import FormatError
from .training import TrainConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DataConfig(_Strict):
    """Where samples come from and how they are split.

    Exactly one source is used: an IDX directory (MNIST layout) that is
    latency-encoded on load, or an NCGF feature file. ``val_size`` takes the
    validation samples right after the first ``train_size`` training samples;
    without it a stratified ``validation_fraction`` of the training samples is
    held out.
    """

    mnist_dir: str | None = None
    features: str | None = None
    test_features: str | None = None
    encoding: Literal["latency"] = "latency"
    v_max: float = Field(255.0, gt=0)
    train_size: int | None = Field(None, ge=1)
    val_size: int | None = Field(None, ge=1)
    test_size: int | None = Field(None, ge=1)
    validation_fraction: float = Field(0.1, gt=0, lt=1)

    @model_validator(mode="after")
    def _one_source(self):
        if self.mnist_dir is not None and self.features is not None:
            raise ValueError("set either mnist_dir or features, not both")
        if self.test_features is not None and self.features is None:
            raise ValueError("test_features requires features")
        return self


class ModelConfig(_Strict):
    rule: Literal["s2-stdp", "sstdp", "r-stdp"] = "s2-stdp"
    neurons_per_class: int = Field(5, ge=1)
    labeling: bool = True
    regulation: Literal["off", "cr1", "cr2"] = "cr2"
    inhibition: Literal["auto", "intra-ncg", "global", "none"] = "auto"
    theta: float | None = Field(None, gt=0)
    threshold_scale: float = Field(0.8, gt=0)
    eta_th: float = Field(2.0, ge=0)
    beta_th: float = Field(0.9, gt=0, le=1)
    a_plus: float = Field(0.01, gt=0)
    a_minus: float = Field(-0.01, lt=0)
    g: float = Field(0.2, ge=0)
    w_min: float = 0.0
    w_max: float = 1.0
    normalize: bool = True
    dropout: float = Field(0.0, ge=0, lt=1)
    adaptive_lr: bool = False
    max_epochs: int = Field(100, ge=1)
    patience: int = Field(10, ge=1)

    @field_validator("regulation", mode="before")
    @classmethod
    def _yaml_off(cls, value):
        # YAML 1.1 reads a bare `off` as false
        return "off" if value is False else value

    @model_validator(mode="after")
    def _consistent(self):
        if self.labeling and self.neurons_per_class < 2:
            raise ValueError("labeling requires neurons_per_class >= 2")
        if not self.w_min < self.w_max:
            raise ValueError("w_min must be below w_max")
        return self


class ExperimentConfig(_Strict):
    data: DataConfig = DataConfig()
    model: ModelConfig = ModelConfig()
    seed: int = Field(0, ge=0, lt=2**64)
    output_dir: str = "runs/default"

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **self.model.model_dump())

    def with_overrides(self, **changes) -> "ExperimentConfig":
        """Copy with dotted-path overrides, e.g. ``{"data.mnist_dir": "..."}``; re-validated."""
        doc = self.to_dict()
        for key, value in changes.items():
            node = doc
            *parents, leaf = key.split(".")
            for p in parents:
                node = node[p]
            node[leaf] = value
        return ExperimentConfig.model_validate(doc)

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise FormatError(f"config is not valid YAML: {exc}") from exc
        return cls.model_validate(doc if doc is not None else {})

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_yaml(Path(path).read_text())


def format_validation_error(exc: ValidationError) -> str:
    """One ``path: message`` line per schema violation."""
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "\n".join(lines)


def load_grid(path) -> dict:
    """A grid document maps model parameter names to candidate lists."""
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise FormatError(f"grid is not valid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict) or not all(isinstance(v, list) for v in doc.values()):
        raise FormatError("grid must map parameter names to lists of candidate values")
    return doc
