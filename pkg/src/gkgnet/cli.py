"""Command-line front end.

    gkg train|eval|gradcheck|sweep|export-graph --config <path>
        [--out <dir>] [--seed <u64>] [--precision f32|f64]

Exit codes: 0 success, 1 failed gradient check, 2 invalid configuration or
arguments, 3 non-finite loss during training.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import losses
from .checkpoint import load_checkpoint, restore_model
from .config import ConfigError, RunConfig, load_config, tiny_config
from .data import label_names, load_dataset
from .model import GkgModel
from .numerics import NumericError, finite_difference_gradcheck, ops, using_dtype
from .trainer import evaluate_model, generate_splits, train_run

GRADCHECK_TOL = 1e-4


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    d = cfg.to_dict()
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "precision", None) is not None:
        d["mode"]["precision"] = args.precision
    return RunConfig.from_dict(d)


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = Path(args.out)
    result = train_run(cfg, out_dir=out, echo=print)
    print(f"final checkpoint: {result.final_checkpoint}")
    print(f"best checkpoint: {result.best_checkpoint} (epoch {result.best_epoch})")
    return 0


def cmd_eval(args) -> int:
    manifest = load_checkpoint(args.checkpoint)
    precision = args.precision
    model, cfg = restore_model(manifest, precision=precision)
    if args.config is not None:
        file_cfg = load_config(args.config)
        if file_cfg.model != cfg.model:
            raise ConfigError(
                "checkpoint model plan does not match --config "
                f"({cfg.model} vs {file_cfg.model})"
            )
        cfg = _apply_overrides(file_cfg, args)
    with using_dtype(precision or cfg.mode.precision):
        if args.dataset is not None:
            samples, _ = load_dataset(args.dataset)
            expected = (*cfg.model.image_size, cfg.model.channels)
            if samples and samples[0].image.shape != expected:
                raise ConfigError(
                    f"dataset images {samples[0].image.shape} do not match model input {expected}"
                )
            if samples and samples[0].labels.shape != (cfg.model.num_labels,):
                raise ConfigError(
                    f"dataset labels {samples[0].labels.shape} do not match "
                    f"{cfg.model.num_labels} model classes"
                )
        else:
            _, samples, _ = generate_splits(cfg)
        report = evaluate_model(model, samples)
    print(json.dumps(report.as_dict()))
    return 0


def cmd_gradcheck(args) -> int:
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        cfg = RunConfig.from_dict(tiny_config())
    d = cfg.to_dict()
    d["mode"]["precision"] = "f64"  # finite differences need the headroom
    if args.seed is not None:
        d["seed"] = args.seed
    cfg = RunConfig.from_dict(d)
    with using_dtype("f64"):
        model = GkgModel(cfg.model, seed=cfg.seed)
        train, _, _ = generate_splits(cfg)
        batch = train[: max(1, args.batch)]
        images = [s.image for s in batch]
        targets = np.stack([s.labels for s in batch])
        # freeze neighbor selection at the base parameters: finite differences
        # must not jump across graph changes
        base = model.forward_batch(images, capture_graphs=True)
        frozen = [snap.graph for snap in base.snapshots]

        def objective():
            trace = model.forward_batch(images, graph_override=frozen)
            return losses.total_loss(trace.logits, targets, cfg.loss)

        result = finite_difference_gradcheck(
            objective, model.store, h=args.h, sample_fraction=args.sample_fraction
        )
    print(f"{result.max_rel_error:.6e}")
    if result.max_rel_error <= GRADCHECK_TOL:
        return 0
    print(
        f"gradient check failed: worst parameter {result.worst_param!r} "
        f"(flat index {result.worst_index})",
        file=sys.stderr,
    )
    return 1


def cmd_sweep(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"--values must be comma-separated integers: {e}") from e
    if not values:
        raise ConfigError("--values is empty")
    axis = args.axis
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    clamp_notes = []
    for v in values:
        run_cfg = cfg.replace_model(groups=v) if axis == "G" else cfg.replace_model(k=v)
        t0 = time.perf_counter()
        result = train_run(run_cfg, out_dir=out / f"sweep_{axis}{v}")
        wall = time.perf_counter() - t0
        last = result.history[-1]
        rows.append((v, last["val_map"], last["val_cf1"], last["val_of1"], wall))
        if axis == "K":
            min_nodes = min(h * w for h, w in run_cfg.model.grids())
            if v > min_nodes:
                clamp_notes.append(
                    f"# K={v} clamped to {min_nodes} at the smallest stage"
                )
    csv_path = out / "sweep.csv"
    with open(csv_path, "w") as f:
        f.write("value,map,cf1,of1,wall_s\n")
        for v, m, c, o, wall in rows:
            f.write(f"{v},{m:.6f},{c:.6f},{o:.6f},{wall:.3f}\n")
        for note in clamp_notes:
            f.write(note + "\n")
    print(f"wrote {csv_path}")
    return 0


def _read_image(path: Path, image_size, channels: int) -> np.ndarray:
    """Raw little-endian float32 or binary PPM (P6), normalized to [0,1]."""
    h, w = image_size
    raw = path.read_bytes()
    if raw[:2] == b"P6":
        fields: list[bytes] = []
        pos = 2
        while len(fields) < 3:
            while pos < len(raw) and raw[pos : pos + 1].isspace():
                pos += 1
            if raw[pos : pos + 1] == b"#":
                while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                    pos += 1
                continue
            start = pos
            while pos < len(raw) and not raw[pos : pos + 1].isspace():
                pos += 1
            fields.append(raw[start:pos])
        pw, ph, maxval = (int(f) for f in fields)
        pos += 1
        if (ph, pw) != (h, w) or maxval != 255:
            raise ConfigError(
                f"PPM image is {pw}x{ph} maxval {maxval}; expected {w}x{h} maxval 255"
            )
        data = np.frombuffer(raw, dtype=np.uint8, count=h * w * 3, offset=pos)
        return (data.reshape(h, w, 3) / 255.0).astype(np.float32)
    expected = h * w * channels * 4
    if len(raw) != expected:
        raise ConfigError(
            f"raw image file holds {len(raw)} bytes; expected {expected} "
            f"for {h}x{w}x{channels} float32"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(h, w, channels).astype(np.float32)


def cmd_export_graph(args) -> int:
    manifest = load_checkpoint(args.checkpoint)
    model, cfg = restore_model(manifest, precision=args.precision)
    image_path = Path(args.image)
    if not image_path.exists():
        raise ConfigError(f"image file not found: {image_path}")
    image = _read_image(image_path, cfg.model.image_size, cfg.model.channels)
    with using_dtype(args.precision or cfg.mode.precision):
        record = model.export_connections(image, label_names(cfg.model.num_labels))
    text = json.dumps(record)
    if args.out is not None:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gkg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="run configuration JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument(
            "--precision", choices=["f32", "f64"], default=None, help="override precision"
        )

    p = sub.add_parser("train", help="train a model and write checkpoints + log")
    common(p)
    p.add_argument("--out", default="gkg_run", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, JSON report to stdout")
    common(p, config_required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", default=None, help="dataset directory (default: config val split)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    common(p, config_required=False)
    p.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    p.add_argument("--batch", type=int, default=1, help="number of samples in the objective")
    p.add_argument(
        "--sample-fraction",
        type=float,
        default=1.0,
        help="fraction of each parameter's entries to check",
    )
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="train one model per axis value, emit CSV")
    common(p)
    p.add_argument("--axis", choices=["G", "K"], required=True)
    p.add_argument("--values", required=True, help="comma-separated integers")
    p.add_argument("--out", default="gkg_sweep", help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-graph", help="emit the connection record for one image")
    common(p, config_required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="raw f32 or P6 PPM image file")
    p.add_argument("--out", default=None, help="output JSON path (default stdout)")
    p.set_defaults(func=cmd_export_graph)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())
