"""Command-line entry points.

    promptseg generate-data --out DIR --n 200 [--classes ...] [--camouflage]
    promptseg train --config run.json
    promptseg eval --checkpoint best.ckpt --dataset DIR/manifest.json
                   [--split split.json] --mode semi_automatic --out metrics.json
    promptseg report-params [--config run.json | --preset vit_b|toy] [--out f]
    promptseg serve --checkpoint best.ckpt --port 8000

Exit codes: 0 success, 2 invalid configuration (message names the field),
3 training aborted on non-finite loss, 4 checkpoint version/config mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import (
    CheckpointError,
    ConfigError,
    DataIOError,
    InputError,
    NaNLossError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NAN = 3
EXIT_CHECKPOINT = 4


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _require(cfg: dict, field: str, kind, where: str = "config"):
    if field not in cfg:
        raise ConfigError(f"{where}.{field}: missing required field")
    value = cfg[field]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(
            f"{where}.{field}: expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}"
        )
    return value


def load_run_config(path: Path) -> dict:
    """Parse and validate a run configuration file.

    Top-level fields: dataset (str), val_dataset (str, optional), split
    (str, optional), out_dir (str), model (object, optional), train (object).
    """
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    _require(cfg, "dataset", str)
    _require(cfg, "out_dir", str)
    train_cfg = _require(cfg, "train", dict)
    for key, kind in (
        ("mode", str),
        ("epochs", int),
        ("batch_size", int),
        ("learning_rate", float),
        ("seed", int),
    ):
        _require(train_cfg, key, kind, where="train")
    if train_cfg["mode"] not in ("manual", "semi_automatic"):
        raise ConfigError(f"train.mode: must be 'manual' or 'semi_automatic', got {train_cfg['mode']!r}")
    if train_cfg["epochs"] < 1:
        raise ConfigError("train.epochs: must be >= 1")
    if train_cfg["batch_size"] < 1:
        raise ConfigError("train.batch_size: must be >= 1")
    if train_cfg["learning_rate"] <= 0:
        raise ConfigError("train.learning_rate: must be positive")
    model_cfg = cfg.get("model", {})
    if not isinstance(model_cfg, dict):
        raise ConfigError("model: expected an object")
    for key in ("budget_c", "budget_s"):
        if key in model_cfg and not isinstance(model_cfg[key], int):
            raise ConfigError(f"model.{key}: expected int")
    if "tau" in model_cfg and not 0.0 < float(model_cfg["tau"]) < 1.0:
        raise ConfigError("model.tau: must lie in (0, 1)")
    if "k_points" in model_cfg and int(model_cfg["k_points"]) < 1:
        raise ConfigError("model.k_points: must be >= 1")
    return cfg


def _build_model_config(model_cfg: dict, manifest):
    from .model import toy_config, vit_b_config

    preset = model_cfg.get("preset", "toy")
    if preset == "vit_b":
        return vit_b_config()
    if preset != "toy":
        raise ConfigError(f"model.preset: unknown preset {preset!r}")
    classes = tuple(manifest.classes) if manifest is not None else None
    kwargs = {}
    if classes:
        kwargs["classes"] = ("a", "photo", "of") + classes
    if manifest is not None:
        kwargs["image_size"] = manifest.image_size
    cfg = toy_config(**kwargs)
    overrides = {
        k: model_cfg[k]
        for k in ("budget_c", "budget_s", "tau", "k_points")
        if k in model_cfg
    }
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    return cfg


def cmd_generate_data(args) -> int:
    from .data import generate_synthetic_dataset

    try:
        manifest = generate_synthetic_dataset(
            args.out,
            n_samples=args.n,
            classes=tuple(args.classes),
            size=args.size,
            camouflage=args.camouflage,
            seed=args.seed,
        )
    except InputError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    print(f"wrote {len(manifest.samples)} samples under {manifest.root}")
    return EXIT_OK


def cmd_train(args) -> int:
    import torch

    from .data import DatasetManifest, SplitManifest, load_training_samples
    from .model import SegModel
    from .training import LossSwitches, TrainConfig, train

    try:
        cfg = load_run_config(Path(args.config))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    try:
        manifest = DatasetManifest.load(cfg["dataset"])
    except DataIOError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    ids = None
    if cfg.get("split"):
        ids = SplitManifest.load(cfg["split"]).included
    train_samples = load_training_samples(manifest, ids)
    val_samples = []
    if cfg.get("val_dataset"):
        val_manifest = DatasetManifest.load(cfg["val_dataset"])
        val_samples = load_training_samples(val_manifest)
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    train_raw = dict(cfg["train"])
    loss_raw = train_raw.pop("loss", {})
    try:
        train_cfg = TrainConfig(loss=LossSwitches(**loss_raw), **train_raw)
        model_config = _build_model_config(cfg.get("model", {}), manifest)
    except (ConfigError, TypeError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    torch.manual_seed(train_cfg.seed)
    model = SegModel(model_config, seed=train_cfg.seed)
    try:
        result = train(model, train_cfg, train_samples, val_samples, out_dir=out_dir)
    except NaNLossError as exc:
        return _fail(EXIT_NAN, str(exc))
    print(f"run directory: {out_dir}")
    print(f"best val mIoU {result.best_val_miou:.4f} at epoch {result.best_epoch}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .checkpoint import load_model
    from .data import DatasetManifest, SplitManifest, load_training_samples
    from .evaluation import evaluate

    try:
        model, extra = load_model(args.checkpoint)
    except CheckpointError as exc:
        return _fail(EXIT_CHECKPOINT, str(exc))
    try:
        manifest = DatasetManifest.load(args.dataset)
    except DataIOError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    ids = None
    if args.split:
        ids = SplitManifest.load(args.split).included
    samples = load_training_samples(manifest, ids)
    record = evaluate(model, samples, args.mode, seed=args.seed)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "metrics.json"
    record.write(out)
    print(f"samples evaluated: {record.sample_count} (mode={args.mode})")
    print(f"point sources: {record.point_sources}")
    print(
        f"mIoU={record.miou:.4f} MAE={record.mae:.4f} "
        f"S={record.s_alpha:.4f} E={record.e_phi:.4f} Fw={record.f_beta_w:.4f}"
    )
    for c, v in sorted(record.per_class_iou.items()):
        print(f"  IoU[{c}] = {v:.4f}")
    print(f"metrics written to {out}")
    return EXIT_OK


def cmd_report_params(args) -> int:
    from .model import SegModel, toy_config, vit_b_config
    from .reporting import parameter_report

    try:
        if args.config:
            cfg = load_run_config(Path(args.config))
            model_config = _build_model_config(cfg.get("model", {}), None)
        elif args.preset == "vit_b":
            model_config = vit_b_config()
        else:
            model_config = toy_config()
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    model = SegModel(model_config, seed=0)
    report = parameter_report(model)
    print(report.format_table())
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        print(f"report written to {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .server import serve

    try:
        serve(args.checkpoint, port=args.port, host=args.host)
    except CheckpointError as exc:
        return _fail(EXIT_CHECKPOINT, str(exc))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="promptseg")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic shapes dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--classes", nargs="+", default=["circle", "square", "triangle", "cross"])
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--camouflage", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_generate_data)

    p = sub.add_parser("train", help="train from a run config file")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset/split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--mode", choices=["manual", "semi_automatic"], default="semi_automatic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report-params", help="per-component parameter accounting")
    p.add_argument("--config", default=None)
    p.add_argument("--preset", choices=["toy", "vit_b"], default="toy")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_report_params)

    p = sub.add_parser("serve", help="serve the HTTP segmentation endpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
