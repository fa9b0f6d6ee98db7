"""Run configuration: strict JSON loading and cross-field validation.

Configs are validated against the shipped JSON schema (unknown keys are
rejected) and then against every module precondition, so that any violation
surfaces before a run starts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .data import PROTOTYPES
from .losses import LossConfig
from .model import ModelConfig


class ConfigError(ValueError):
    """Invalid run configuration; message names the offending field."""


def _schema(name: str) -> dict:
    path = resources.files("gkgnet").joinpath("schemas", name)
    return json.loads(path.read_text())


CONFIG_SCHEMA = _schema("config.schema.json")
CONNECTIONS_SCHEMA = _schema("connections.schema.json")


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-3
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    warmup_steps: int = 200
    decay_epochs: tuple[int, ...] = (15, 25)
    epochs: int = 30
    batch_size: int = 32
    grad_clip: float = 1.0  # global-norm ceiling; 0 disables clipping


@dataclass(frozen=True)
class DataConfig:
    seed: int = 0
    train_size: int = 2000
    val_size: int = 500
    max_objects: int = 4


@dataclass(frozen=True)
class ModeConfig:
    capture_graphs: bool = False
    precision: str = "f32"


@dataclass(frozen=True)
class RunConfig:
    seed: int
    model: ModelConfig
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    mode: ModeConfig = field(default_factory=ModeConfig)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as e:
            path = ".".join(str(p) for p in e.absolute_path) or "<root>"
            raise ConfigError(f"config field {path!r}: {e.message}") from e
        m = raw["model"]
        model = ModelConfig(
            dims=tuple(m["dims"]),
            patch_modules=tuple(m["patch_modules"]),
            cross_modules=tuple(m["cross_modules"]),
            patch_size=m["patch_size"],
            image_size=tuple(m["image_size"]),
            channels=m.get("channels", 3),
            num_labels=m["num_labels"],
            k=m["k"],
            groups=m["groups"],
            ffn_expansion=m.get("ffn_expansion", 4),
        )
        try:
            model.validate()
            loss = LossConfig(**raw.get("loss", {}))
        except ValueError as e:
            raise ConfigError(str(e)) from e
        o = dict(raw.get("optimizer", {}))
        if "decay_epochs" in o:
            o["decay_epochs"] = tuple(o["decay_epochs"])
        optim = OptimConfig(**o)
        data = DataConfig(**raw.get("dataset", {}))
        mode = ModeConfig(**raw.get("mode", {}))
        cfg = cls(seed=raw["seed"], model=model, loss=loss, optim=optim, data=data, mode=mode)
        cfg._cross_validate()
        return cfg

    def _cross_validate(self) -> None:
        if self.model.num_labels > len(PROTOTYPES):
            raise ConfigError(
                f"model.num_labels={self.model.num_labels} exceeds the "
                f"{len(PROTOTYPES)} available shape prototypes"
            )
        if self.model.channels != 3:
            raise ConfigError("the shapes dataset renders RGB images; model.channels must be 3")
        if self.data.max_objects > self.model.num_labels:
            raise ConfigError(
                f"dataset.max_objects={self.data.max_objects} exceeds num_labels={self.model.num_labels}"
            )
        if self.optim.batch_size > self.data.train_size:
            raise ConfigError(
                f"optimizer.batch_size={self.optim.batch_size} exceeds "
                f"dataset.train_size={self.data.train_size}"
            )

    def replace_model(self, **kwargs) -> "RunConfig":
        """New config with some model fields swapped (sweep axes); revalidates."""
        d = self.to_dict()
        d["model"].update(kwargs)
        return RunConfig.from_dict(d)

    def to_dict(self) -> dict:
        m = self.model
        return {
            "seed": self.seed,
            "model": {
                "dims": list(m.dims),
                "patch_modules": list(m.patch_modules),
                "cross_modules": list(m.cross_modules),
                "patch_size": m.patch_size,
                "image_size": list(m.image_size),
                "channels": m.channels,
                "num_labels": m.num_labels,
                "k": m.k,
                "groups": m.groups,
                "ffn_expansion": m.ffn_expansion,
            },
            "loss": {
                "smooth_eps": self.loss.smooth_eps,
                "gamma_pos": self.loss.gamma_pos,
                "gamma_neg": self.loss.gamma_neg,
                "margin": self.loss.margin,
                "floor": self.loss.floor,
            },
            "optimizer": {
                "lr": self.optim.lr,
                "weight_decay": self.optim.weight_decay,
                "beta1": self.optim.beta1,
                "beta2": self.optim.beta2,
                "warmup_steps": self.optim.warmup_steps,
                "decay_epochs": list(self.optim.decay_epochs),
                "epochs": self.optim.epochs,
                "batch_size": self.optim.batch_size,
                "grad_clip": self.optim.grad_clip,
            },
            "dataset": {
                "seed": self.data.seed,
                "train_size": self.data.train_size,
                "val_size": self.data.val_size,
                "max_objects": self.data.max_objects,
            },
            "mode": {
                "capture_graphs": self.mode.capture_graphs,
                "precision": self.mode.precision,
            },
        }


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return RunConfig.from_dict(raw)


def micro_config() -> dict:
    """Desk-scale training default: trains in minutes on a CPU."""
    return {
        "seed": 0,
        "model": {
            "dims": [16, 32, 64, 64],
            "patch_modules": [1, 1, 2, 1],
            "cross_modules": [1, 1, 1, 1],
            "patch_size": 2,
            "image_size": [32, 32],
            "channels": 3,
            "num_labels": 8,
            "k": 9,
            "groups": 2,
            "ffn_expansion": 4,
        },
        "loss": {"smooth_eps": 0.05, "gamma_pos": 0.0, "gamma_neg": 4.0, "margin": 0.05},
        "optimizer": {
            "lr": 1e-3,
            "weight_decay": 0.05,
            "beta1": 0.9,
            "beta2": 0.999,
            "warmup_steps": 200,
            "decay_epochs": [15, 25],
            "epochs": 30,
            "batch_size": 32,
        },
        "dataset": {"seed": 0, "train_size": 2000, "val_size": 500, "max_objects": 4},
        "mode": {"capture_graphs": False, "precision": "f32"},
    }


def tiny_config() -> dict:
    """Smallest full four-stage network; the gradient-check default."""
    return {
        "seed": 0,
        "model": {
            "dims": [8, 16, 16, 16],
            "patch_modules": [1, 1, 1, 1],
            "cross_modules": [1, 1, 1, 1],
            "patch_size": 4,
            "image_size": [32, 32],
            "channels": 3,
            "num_labels": 4,
            "k": 3,
            "groups": 2,
            "ffn_expansion": 4,
        },
        "loss": {"smooth_eps": 0.05, "gamma_pos": 0.0, "gamma_neg": 4.0, "margin": 0.05},
        "optimizer": {
            "lr": 1e-3,
            "weight_decay": 0.05,
            "warmup_steps": 5,
            "decay_epochs": [2],
            "epochs": 2,
            "batch_size": 8,
        },
        "dataset": {"seed": 0, "train_size": 32, "val_size": 16, "max_objects": 2},
        "mode": {"capture_graphs": False, "precision": "f64"},
    }
