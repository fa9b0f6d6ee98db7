"""Single-file JSON checkpoints.

The manifest echoes the run configuration and stores every parameter as a
base64 little-endian float32 payload; loading in an f32 run reproduces
forward outputs bit-exactly.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .model import GkgModel
from .numerics import default_dtype, using_dtype

FORMAT_VERSION = 1


def save_checkpoint(
    path,
    model: GkgModel,
    run_config: RunConfig,
    step: int,
    rng_state: dict | None = None,
    param_values: dict[str, np.ndarray] | None = None,
) -> None:
    """Write the manifest; param_values overrides the live store (best-epoch
    snapshots)."""
    values = param_values if param_values is not None else model.store.state_dict()
    params = []
    for name in model.store.names():
        arr = np.ascontiguousarray(values[name], dtype="<f4")
        params.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "data": base64.b64encode(arr.tobytes()).decode("ascii"),
            }
        )
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": run_config.to_dict(),
        "step": int(step),
        "rng_state": rng_state,
        "params": params,
    }
    Path(path).write_text(json.dumps(manifest))


def load_checkpoint(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"checkpoint file not found: {p}")
    try:
        manifest = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"checkpoint is not valid JSON: {e}") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ConfigError(
            f"unsupported checkpoint format version {manifest.get('format_version')!r}"
        )
    return manifest


def restore_model(manifest: dict, precision: str | None = None) -> tuple[GkgModel, RunConfig]:
    """Rebuild the model a manifest describes and load its parameters."""
    cfg = RunConfig.from_dict(manifest["config"])
    with using_dtype(precision or cfg.mode.precision):
        model = GkgModel(cfg.model, seed=cfg.seed)
        state = {}
        for entry in manifest["params"]:
            raw = base64.b64decode(entry["data"])
            arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
            state[entry["name"]] = arr.astype(default_dtype())
        try:
            model.store.load_state(state)
        except ValueError as e:
            raise ConfigError(f"checkpoint does not match its config: {e}") from e
    return model, cfg
