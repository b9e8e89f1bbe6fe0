"""Command-line front end: split, train, evaluate, predict, gradcheck.

Exit codes are a stable scripting contract:

    0  success
    2  configuration error (bad flags, bad config file, unknown arch, ...)
    3  data error (missing/invalid manifest or image files)
    4  runtime or numeric failure (including a failed gradient check)

Configuration comes from a flat key=value file ('#' starts a comment) with
command-line flags taking precedence: flag > config file > built-in default.
Unknown keys are rejected. The recognized keys mirror the RunConfig fields
and are documented in the README.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import (
    BINARY_LABELS,
    MULTICLASS_LABELS,
    decode_and_resize,
    load_manifest,
    materialize,
    normalize,
    relabel_binary,
    stratified_split,
    write_manifest,
)
from .errors import ConfigError, DataError, PVFaultError
from .gradcheck import model_gradcheck
from .models import ARCH_IDS, build_model, load_checkpoint, save_checkpoint
from .training import OPTIMIZERS, TrainConfig, emit_curves, evaluate, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


@dataclass
class RunConfig:
    """Everything a training run needs, after merging defaults, file, and flags."""

    arch: str = "proposed-3conv"
    classes: int = 4
    epochs: int = 30
    batch_size: int = 32
    optimizer: str = "adam"
    learning_rate: float | None = None
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    augment: bool = True
    image_size: int = 128
    train_manifest: str | None = None
    test_manifest: str | None = None
    data_root: str | None = None
    out_dir: str = "runs/out"

    def validate(self) -> None:
        if self.arch not in ARCH_IDS:
            raise ConfigError(f"unknown arch '{self.arch}'; expected one of {', '.join(ARCH_IDS)}")
        if self.classes not in (2, 4):
            raise ConfigError(f"classes must be 2 or 4, got {self.classes}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got '{self.optimizer}'")
        if self.image_size < 1:
            raise ConfigError(f"image_size must be positive, got {self.image_size}")
        if self.train_manifest is None or self.test_manifest is None:
            raise ConfigError("train_manifest and test_manifest are both required")
        self.to_train_config().validate()

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            beta1=self.beta1,
            beta2=self.beta2,
            seed=self.seed,
            augment=self.augment,
        )


_BOOL_WORDS = {"on": True, "true": True, "1": True, "yes": True,
               "off": False, "false": False, "0": False, "no": False}


def _coerce(key: str, value: str, target_type):
    try:
        if target_type is bool:
            if value.lower() not in _BOOL_WORDS:
                raise ValueError(f"expected on/off, got '{value}'")
            return _BOOL_WORDS[value.lower()]
        return target_type(value)
    except ValueError as exc:
        raise ConfigError(f"config key '{key}': {exc}") from exc


_FIELD_TYPES = {
    "arch": str, "classes": int, "epochs": int, "batch_size": int, "optimizer": str,
    "learning_rate": float, "momentum": float, "beta1": float, "beta2": float,
    "seed": int, "augment": bool, "image_size": int,
    "train_manifest": str, "test_manifest": str, "data_root": str, "out_dir": str,
}
assert set(_FIELD_TYPES) == {f.name for f in fields(RunConfig)}


def parse_config_file(path) -> dict:
    """Flat key = value parser; rejects unknown keys."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path} line {lineno}: expected 'key = value', got '{raw}'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path} line {lineno}: unknown config key '{key}'")
        values[key] = _coerce(key, value, _FIELD_TYPES[key])
    return values


def build_run_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig()
    if args.config is not None:
        for key, value in parse_config_file(args.config).items():
            setattr(config, key, value)
    for key in _FIELD_TYPES:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            setattr(config, key, flag_value)
    config.validate()
    return config


def _load_split(manifest_path, data_root, classes):
    ds = load_manifest(manifest_path, root=data_root)
    if classes == 2 and ds.taxonomy == "multiclass":
        ds = relabel_binary(ds)
    elif classes == 4 and ds.taxonomy == "binary":
        raise DataError(
            f"{manifest_path} holds binary labels but a 4-class model was requested"
        )
    return ds


def cmd_split(args) -> int:
    if not 0.0 < args.fraction < 1.0:
        raise ConfigError(f"--fraction must be in (0,1), got {args.fraction}")
    ds = load_manifest(args.manifest, root=args.data_root)
    train_ds, test_ds = stratified_split(ds, args.fraction, args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(train_ds, out_dir / "train.csv")
    write_manifest(test_ds, out_dir / "test.csv")
    print(f"wrote {out_dir / 'train.csv'} ({len(train_ds)} samples)")
    print(f"wrote {out_dir / 'test.csv'} ({len(test_ds)} samples)")
    return EXIT_OK


def cmd_train(args) -> int:
    config = build_run_config(args)  # fully validated before anything is written

    train_ds = _load_split(config.train_manifest, config.data_root, config.classes)
    test_ds = _load_split(config.test_manifest, config.data_root, config.classes)
    size = (config.image_size, config.image_size)
    train_data = materialize(train_ds, size)
    test_data = materialize(test_ds, size)

    model = build_model(
        config.arch, config.classes, (3, config.image_size, config.image_size), seed=config.seed
    )
    log = train(model, train_data, test_data, config.to_train_config())

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "model.ckpt"
    save_checkpoint(model, ckpt_path)
    csv_path, svg_path = emit_curves(log, out_dir)

    final = log.records[-1]
    print(f"trained {config.arch} ({config.classes} classes) for {config.epochs} epochs")
    print(f"final train acc {final.train_acc:.4f}, test acc {final.test_acc:.4f}")
    for path in (ckpt_path, csv_path, svg_path):
        print(f"wrote {path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_checkpoint(args.checkpoint)
    ds = _load_split(args.manifest, args.data_root, model.num_classes)
    data = materialize(ds, model.input_shape[1:])
    report = evaluate(model, data)
    for line in report.format_lines():
        print(line)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    image = decode_and_resize(args.image, model.input_shape[1:])
    x = normalize(image[None, ...], model.norm_mean, model.norm_std)
    probs = model.forward(x, train=False)[0]
    class_names = BINARY_LABELS if model.num_classes == 2 else MULTICLASS_LABELS
    print(f"prediction: {class_names[int(probs.argmax())]}")
    print("probabilities: " + " ".join(
        f"{name}={float(p)!r}" for name, p in zip(class_names, probs)))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.arch not in ARCH_IDS:
        raise ConfigError(f"unknown arch '{args.arch}'; expected one of {', '.join(ARCH_IDS)}")
    if args.classes not in (2, 4):
        raise ConfigError(f"--classes must be 2 or 4, got {args.classes}")
    model = build_model(args.arch, args.classes, (3, 32, 32), seed=args.seed, dtype=np.float64)
    rng = np.random.default_rng(args.seed + 1)
    images = rng.random((args.batch, 3, 32, 32))
    labels = rng.integers(0, args.classes, size=args.batch)
    report = model_gradcheck(
        model, images, labels, tolerance=args.tolerance, samples_per_tensor=args.samples,
        seed=args.seed,
    )
    print(f"gradient check: {args.arch}, {args.classes} classes, batch {args.batch}, 32x32 input")
    for line in report.format_lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_RUNTIME


def _add_run_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--arch", choices=ARCH_IDS, default=None)
    p.add_argument("--classes", type=int, choices=(2, 4), default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--optimizer", choices=OPTIMIZERS, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--beta1", type=float, default=None)
    p.add_argument("--beta2", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--augment", type=lambda s: _coerce("augment", s, bool), default=None,
                   metavar="{on,off}")
    p.add_argument("--image-size", dest="image_size", type=int, default=None)
    p.add_argument("--train-manifest", dest="train_manifest", default=None)
    p.add_argument("--test-manifest", dest="test_manifest", default=None)
    p.add_argument("--data-root", dest="data_root", default=None)
    p.add_argument("--out-dir", dest="out_dir", default=None)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pvfault",
        description="Train and evaluate CNN classifiers for PV panel surface faults.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="stratified train/test split of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--fraction", type=float, default=0.7, help="train fraction (default 0.7)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--data-root", dest="data_root", default=None)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model and write checkpoint + curves")
    _add_run_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="confusion matrix and accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--data-root", dest="data_root", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="classify one image with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward passes")
    p.add_argument("--arch", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=2, help="batch size (<= 4 keeps it fast)")
    p.add_argument("--samples", type=int, default=24, help="coordinates checked per tensor")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad flags, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (PVFaultError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
