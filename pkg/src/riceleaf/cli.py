"""Command-line entry point.

Subcommands: scan, train, eval, predict, augment-preview, inspect, serve.
Exit codes: 0 success, 2 configuration error, 3 training failure,
4 prediction failed for at least one input image.

Settings may come from a YAML config file (see README for the schema);
every config key is overridable by a flag, and the effective configuration
is echoed before training for provenance.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np
import yaml

from . import data as dat
from . import modelio
from . import train as tr
from . import zoo
from .errors import ConfigError, DecodeError, RiceleafError, TrainingError
from .fileio import atomic_write_bytes, atomic_write_text
from .nn import model_forward
from .tensor import Tensor

_CONFIG_SCHEMA = {
    "train": ("epochs", "batch_size", "learning_rate", "seed", "augment", "freeze"),
    "model": ("input_size", "channels", "backbone"),
    "augmentation": ("flip", "shear", "shear_range"),
    "data": ("manifest", "root"),
    "out": ("model", "history"),
}


def _load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"config file is not valid YAML: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config file must be a mapping of sections")
    unknown = []
    for section, value in raw.items():
        if section not in _CONFIG_SCHEMA:
            unknown.append(section)
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"config section {section!r} must be a mapping")
        for key in value:
            if key not in _CONFIG_SCHEMA[section]:
                unknown.append(f"{section}.{key}")
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return raw


def _resolve_train_settings(args) -> dict:
    """defaults < preset < config file < command-line flags."""
    cfg = {
        "train": {
            "epochs": 10,
            "batch_size": 32,
            "learning_rate": tr.ADAM_ALPHA,
            "seed": 0,
            "augment": False,
            "freeze": [],
        },
        "model": {"input_size": 64, "channels": [8, 16, 32], "backbone": None},
        "augmentation": {"flip": True, "shear": True, "shear_range": 0.2},
        "data": {"manifest": None, "root": None},
        "out": {"model": None, "history": None},
    }
    preset_name = None
    if args.preset:
        preset = tr.iteration_preset(args.preset)
        preset_name = args.preset
        cfg["train"].update(
            epochs=preset.epochs,
            batch_size=preset.batch_size,
            learning_rate=preset.learning_rate,
            augment=preset.augmentation_enabled,
            freeze=list(preset.freeze_policy),
        )
    if args.config:
        file_cfg = _load_config_file(args.config)
        for section, value in file_cfg.items():
            cfg[section].update(value)
    overrides = {
        ("train", "epochs"): args.epochs,
        ("train", "batch_size"): args.batch_size,
        ("train", "learning_rate"): args.learning_rate,
        ("train", "seed"): args.seed,
        ("train", "augment"): args.augment,
        ("train", "freeze"): args.freeze,
        ("model", "input_size"): args.input_size,
        ("model", "channels"): _parse_channels(args.channels) if args.channels else None,
        ("model", "backbone"): args.backbone,
        ("data", "manifest"): args.manifest,
        ("data", "root"): args.root,
        ("out", "model"): args.out,
        ("out", "history"): args.history,
    }
    for (section, key), value in overrides.items():
        if value is not None:
            cfg[section][key] = value

    missing = []
    if not cfg["data"]["manifest"]:
        missing.append("data.manifest (--manifest)")
    if not cfg["out"]["model"]:
        missing.append("out.model (--out)")
    if missing:
        raise ConfigError(f"missing required settings: {', '.join(missing)}")
    cfg["preset"] = preset_name
    return cfg


def _parse_channels(text) -> list:
    try:
        channels = [int(part) for part in str(text).split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"--channels expects comma-separated integers, got {text!r}") from None
    if not channels:
        raise ConfigError("--channels must name at least one stage")
    return channels


# ── commands ───────────────────────────────────────────────────────────

def cmd_scan(args) -> int:
    expected = None
    if args.labels:
        expected = tuple(s.strip() for s in args.labels.split(",") if s.strip())
    manifest, skipped, warnings = dat.scan_directory(args.data_dir, expected)
    # store paths relative to the manifest's own directory, so the manifest
    # plus its neighbours are self-contained
    base = os.path.dirname(os.path.abspath(args.out))
    for r in manifest.records:
        r.path = os.path.relpath(os.path.join(os.path.abspath(args.data_dir), r.path), base)
    manifest.save(args.out)
    for label, count in manifest.counts().items():
        print(f"{label}: {count}")
    print(f"total: {len(manifest)} records -> {args.out}")
    if skipped:
        print(f"warning: skipped {skipped} non-image file(s)", file=sys.stderr)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_train_settings(args)
    echo = {k: v for k, v in cfg.items() if k != "preset"}
    print("effective config:")
    print(yaml.safe_dump(echo, sort_keys=True, default_flow_style=False).rstrip())
    if cfg["preset"]:
        preset = tr.iteration_preset(cfg["preset"])
        print(f"preset: {cfg['preset']} ({preset.note})")

    manifest = dat.DatasetManifest.load(cfg["data"]["manifest"])
    root = cfg["data"]["root"] or os.path.dirname(os.path.abspath(cfg["data"]["manifest"]))
    seed = int(cfg["train"]["seed"])
    if any(r.split is None for r in manifest.records):
        manifest = dat.split_dataset(manifest, 0.8, seed=seed)
        # persist the tags so a later eval sees the same partition
        manifest.save(cfg["data"]["manifest"])
        print(f"split 80/20 (seed {seed}) written back to {cfg['data']['manifest']}")

    if cfg["model"]["backbone"]:
        backbone = modelio.load_model(cfg["model"]["backbone"])
    else:
        size = int(cfg["model"]["input_size"])
        backbone = zoo.build_backbone(
            (3, size, size), tuple(cfg["model"]["channels"]), seed=seed
        )
    head = modelio.HeadSpec(len(manifest.class_labels), manifest.class_labels)
    model = modelio.attach_head(backbone, head, freeze_backbone=False, seed=seed + 1)
    image_size = model.input_shape[1:]

    aug = cfg["augmentation"]
    aug_spec = dat.AugmentSpec(
        horizontal_flip=bool(aug["flip"]),
        shear=bool(aug["shear"]),
        shear_range=float(aug["shear_range"]),
    )
    train_ds = dat.ManifestDataset(
        manifest, dat.TRAIN, root=root, image_size=image_size, augment_spec=aug_spec
    )
    val_ds = dat.ManifestDataset(manifest, dat.VAL, root=root, image_size=image_size)

    config = tr.TrainConfig(
        epochs=int(cfg["train"]["epochs"]),
        batch_size=int(cfg["train"]["batch_size"]),
        learning_rate=float(cfg["train"]["learning_rate"]),
        freeze_policy=tuple(cfg["train"]["freeze"]),
        augmentation_enabled=bool(cfg["train"]["augment"]),
        seed=seed,
    )
    trained, history = tr.train(model, train_ds, val_ds, config)

    trained.metadata.update(
        {
            "seed": str(seed),
            "epochs": str(config.epochs),
            "preset": cfg["preset"] or "",
            "classes": ",".join(manifest.class_labels),
        }
    )
    modelio.save_model(trained, cfg["out"]["model"])
    history_path = cfg["out"]["history"] or cfg["out"]["model"] + ".history.tsv"
    atomic_write_text(history_path, "\n".join(history.to_lines()) + "\n")

    for r in history.records:
        print(
            f"epoch {r.epoch}: loss {r.train_loss:.4f} acc {r.train_accuracy:.4f} | "
            f"val loss {r.val_loss:.4f} acc {r.val_accuracy:.4f} | "
            f"gap {r.accuracy_gap:+.4f} | {r.seconds:.1f}s"
        )
    print(f"model -> {cfg['out']['model']}")
    print(f"history -> {history_path}")
    print(history.result_line())
    return 0


def _predict_one(model, path):
    with open(path, "rb") as f:
        body = f.read()
    raw = dat.decode_image(body, format_hint=os.path.splitext(path)[1].lstrip("."))
    img = dat.preprocess(raw, model.input_shape[1:])
    probs, _ = model_forward(model, Tensor.wrap(img.array[None]))
    return probs.array[0]


def cmd_predict(args) -> int:
    model = modelio.load_model(args.model)
    failed = 0
    for path in args.images:
        try:
            row = _predict_one(model, path)
        except (OSError, DecodeError) as e:
            print(f"error:\t{path}\t{e}", file=sys.stderr)
            failed += 1
            continue
        print(f"image:\t{path}")
        for label, p in zip(model.class_labels, row):
            print(f"{label}\t{p:.6f}")
        print(f"top:\t{model.class_labels[int(np.argmax(row))]}")
    return 4 if failed else 0


def cmd_eval(args) -> int:
    model = modelio.load_model(args.model)
    manifest = dat.DatasetManifest.load(args.manifest)
    if tuple(manifest.class_labels) != tuple(model.class_labels):
        raise ConfigError(
            f"manifest classes {list(manifest.class_labels)} != "
            f"model classes {list(model.class_labels)}"
        )
    root = args.root or os.path.dirname(os.path.abspath(args.manifest))
    ds = dat.ManifestDataset(
        manifest, args.split, root=root, image_size=model.input_shape[1:]
    )
    n = len(model.class_labels)
    confusion = np.zeros((n, n), dtype=np.int64)
    loss_sum = 0.0
    seen = 0
    for xb, yb in ds.sequential_batches(args.batch_size):
        probs, _ = model_forward(model, xb)
        loss, _ = tr.categorical_cross_entropy(probs, yb)
        b = xb.shape[0]
        loss_sum += loss * b
        seen += b
        pred = probs.array.argmax(axis=1)
        true = yb.array.argmax(axis=1)
        for t, p in zip(true, pred):
            confusion[t, p] += 1
    acc = float(np.trace(confusion)) / seen
    print(f"split: {args.split} ({seen} images)")
    print(f"loss: {loss_sum / seen:.6f}")
    print(f"accuracy: {acc:.6f}")
    print("per-class accuracy:")
    for i, label in enumerate(model.class_labels):
        total = confusion[i].sum()
        frac = confusion[i, i] / total if total else float("nan")
        print(f"  {label}: {frac:.6f} (n={total})")
    print("confusion matrix (rows = true class):")
    width = max(len(l) for l in model.class_labels)
    header = " ".join(f"{l:>{width}}" for l in model.class_labels)
    print(f"  {'':>{width}} {header}")
    for i, label in enumerate(model.class_labels):
        cells = " ".join(f"{confusion[i, j]:>{width}}" for j in range(n))
        print(f"  {label:>{width}} {cells}")
    return 0


def cmd_augment_preview(args) -> int:
    if args.count < 0:
        raise ConfigError(f"-n must be >= 0, got {args.count}")
    if args.count == 0:
        return 0
    manifest = dat.DatasetManifest.load(args.manifest)
    if not manifest.records:
        raise ConfigError("manifest has no records")
    root = args.root or os.path.dirname(os.path.abspath(args.manifest))
    spec = dat.AugmentSpec(
        horizontal_flip=args.flip, shear=args.shear, shear_range=args.shear_range
    )
    rng = np.random.default_rng(args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    for i in range(args.count):
        rec = manifest.records[i % len(manifest.records)]
        with open(os.path.join(root, rec.path), "rb") as f:
            raw = dat.decode_image(f.read(), os.path.splitext(rec.path)[1].lstrip("."))
        img = dat.preprocess(raw, (args.size, args.size))
        out = dat.augment(img, spec, rng)
        dest = os.path.join(args.out_dir, f"preview_{i:03d}.ppm")
        atomic_write_bytes(dest, dat.encode_ppm(out))
        print(dest)
    return 0


def cmd_inspect(args) -> int:
    model = modelio.load_model(args.model)
    print(f"input shape: {list(model.input_shape)}")
    print(f"classes: {', '.join(model.class_labels) if model.class_labels else '(backbone)'}")
    if model.metadata:
        print("metadata:")
        for k, v in sorted(model.metadata.items()):
            print(f"  {k}: {v}")
    total = 0
    print("layers:")
    for layer in model.layers:
        shapes = ", ".join(f"{p}{list(t.shape)}" for p, t in layer.params.items())
        count = sum(t.size for t in layer.params.values())
        total += count
        frozen = " frozen" if layer.frozen else ""
        print(f"  {layer.name} ({layer.kind}{frozen}) {shapes}")
    print(f"total parameters: {total}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .serve import create_app

    model_path = args.model or os.environ.get("RICELEAF_MODEL")
    if not model_path:
        raise ConfigError("no model: pass --model or set RICELEAF_MODEL")
    static_dir = args.static_dir or os.environ.get("RICELEAF_STATIC")
    diseases = args.diseases or os.environ.get("RICELEAF_DISEASES")
    app = create_app(model_path, static_dir=static_dir, disease_file=diseases)
    host = args.host or os.environ.get("RICELEAF_HOST", "127.0.0.1")
    port = args.port or int(os.environ.get("RICELEAF_PORT", "8000"))
    uvicorn.run(app, host=host, port=port)
    return 0


# ── parser ─────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riceleaf", description="Rice leaf disease classification pipeline"
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("scan", help="build a manifest from a directory-per-class tree")
    p.add_argument("data_dir", help="directory with one subdirectory per class")
    p.add_argument("--out", required=True, help="manifest TSV to write")
    p.add_argument("--labels", help="comma-separated expected class vocabulary")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("train", help="train a classifier from a manifest")
    p.add_argument("--manifest", help="manifest TSV (from scan)")
    p.add_argument("--out", help="model file to write")
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--preset", help="training preset: paper-iter1, paper-iter2, paper-iter3")
    p.add_argument("--root", help="image root directory (default: manifest directory)")
    p.add_argument("--history", help="history TSV path (default: <out>.history.tsv)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float, dest="learning_rate")
    p.add_argument("--seed", type=int)
    p.add_argument("--input-size", type=int, dest="input_size",
                   help="model input height/width (default 64)")
    p.add_argument("--channels", help="backbone stage widths, e.g. 8,16,32")
    p.add_argument("--backbone", help="pretrained backbone model file to start from")
    p.add_argument("--freeze", action="append",
                   help="layer-name prefix to freeze (repeatable)")
    p.add_argument("--augment", action=argparse.BooleanOptionalAction, default=None,
                   help="enable/disable training-time augmentation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify images with a trained model")
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("images", nargs="+", help="image files (png, jpeg, or ppm)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="evaluate a model on a manifest split")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=(dat.TRAIN, dat.VAL), default=dat.VAL)
    p.add_argument("--root", help="image root directory (default: manifest directory)")
    p.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("augment-preview", help="write augmented samples as P6 files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.add_argument("-n", type=int, default=4, dest="count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=500, help="preview height/width")
    p.add_argument("--root", help="image root directory (default: manifest directory)")
    p.add_argument("--flip", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--shear", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--shear-range", type=float, default=0.2, dest="shear_range")
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("inspect", help="print a model file's structure")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--model", help="model file (or RICELEAF_MODEL)")
    p.add_argument("--host", help="bind address (or RICELEAF_HOST, default 127.0.0.1)")
    p.add_argument("--port", type=int, help="port (or RICELEAF_PORT, default 8000)")
    p.add_argument("--static-dir", dest="static_dir",
                   help="directory of UI assets to serve at / (or RICELEAF_STATIC)")
    p.add_argument("--diseases", help="disease info TSV (or RICELEAF_DISEASES)")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    if not getattr(args, "func", None):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except TrainingError as e:
        print(f"training failed: {e}", file=sys.stderr)
        return 3
    except RiceleafError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2


def entry():
    sys.exit(main())
