"""Command-line front end.

Subcommands: gen-synthetic, extract-features, train, evaluate, run-experiment.
Configuration is a flat JSON object; explicit flags override file values.
Logs go to stderr, data to files and stdout.  Exit codes: 0 success,
1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from .dsp_features import FrameSpec, read_feature_file, write_feature_file
from .errors import DualcoderError
from .models import VARIANTS, ModelConfig
from .train_eval import (
    gen_synthetic,
    load_manifest,
    load_trained,
    run_experiment,
    save_trained,
    split_folds,
    train,
)
from .train_eval.experiment import run_seed_for, thread_cap
from .train_eval.metrics import confusion_matrix, weighted_average_precision
from .train_eval.training import TrainConfig, features_for

log = logging.getLogger("dualcoder")

_MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"variant", "seed", "vocab_size"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_RUN_KEYS = {"seed", "frame_ms", "hop_ms", "folds", "repeats", "by_session"}


class ConfigError(DualcoderError, ValueError):
    pass


@dataclass
class RunConfig:
    """Flat settings for one command: model dims, optimizer, seeds, framing."""

    variant: str = "MDRE"
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    seed: int = 0
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    folds: int = 5
    repeats: int = 10
    by_session: bool = False

    @classmethod
    def from_flat(cls, values: dict, variant: str) -> "RunConfig":
        unknown = set(values) - _MODEL_KEYS - _TRAIN_KEYS - _RUN_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(
            variant=variant.upper(),
            model={k: v for k, v in values.items() if k in _MODEL_KEYS},
            train={k: v for k, v in values.items() if k in _TRAIN_KEYS},
            **{k: v for k, v in values.items() if k in _RUN_KEYS},
        )
        cfg.validate()
        return cfg

    def model_config(self) -> ModelConfig:
        return ModelConfig(variant=self.variant, seed=self.seed, **self.model)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train)

    def frame_spec(self) -> FrameSpec:
        return FrameSpec(self.frame_ms, self.hop_ms)

    def validate(self):
        try:
            self.model_config()
            self.train_config()
            self.frame_spec()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc
        if self.folds < 1 or self.repeats < 1:
            raise ConfigError("folds and repeats must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    if not isinstance(data, dict) or any(isinstance(v, (dict, list)) for v in data.values()):
        raise ConfigError(f"{path}: config must be a flat JSON object")
    return data


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def resolve_config(args) -> RunConfig:
    """Merge the config file with explicit flags; flags win and are logged."""
    values = _load_config_file(getattr(args, "config", None))
    file_variant = values.pop("variant", None)
    flags = _parse_set(getattr(args, "set", None))
    for flag, key in (("seed", "seed"), ("lr", "lr"), ("epochs", "max_epochs"), ("batch_size", "batch_size"),
                      ("patience", "patience"), ("embeddings", "embeddings_path"), ("folds", "folds"),
                      ("repeats", "repeats"), ("frame_ms", "frame_ms"), ("hop_ms", "hop_ms")):
        value = getattr(args, flag, None)
        if value is not None:
            flags[key] = value
    if getattr(args, "by_session", False):
        flags["by_session"] = True
    for key, value in flags.items():
        if key in values and values[key] != value:
            log.info("config %s: file value %r overridden by flag value %r", key, values[key], value)
        values[key] = value
    cfg = RunConfig.from_flat(values, getattr(args, "variant", None) or file_variant or "MDRE")
    log.info("effective config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    return cfg


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualcoder", description="Dual recurrent encoders for speech emotion recognition.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic bimodal corpus")
    p.add_argument("--n", type=int, required=True, help="number of utterances")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--noise", type=float, default=0.05, help="label noise rate (default 0.05)")

    p = sub.add_parser("extract-features", help="write one DCF1 feature file per utterance")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--frame-ms", type=float, default=None)
    p.add_argument("--hop-ms", type=float, default=None)

    def common(p, variant_required=True):
        p.add_argument("--manifest", required=True)
        p.add_argument("--variant", type=str.upper, choices=VARIANTS, required=variant_required,
                       metavar="{are,tre,mdre,mdrea}")
        p.add_argument("--config", help="flat JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--lr", type=float)
        p.add_argument("--epochs", type=int, help="max epochs")
        p.add_argument("--batch-size", type=int)
        p.add_argument("--patience", type=int)
        p.add_argument("--embeddings", help="pretrained embedding text file")
        p.add_argument("--features-dir", help="read features from extract-features output")
        p.add_argument("--frame-ms", type=float)
        p.add_argument("--hop-ms", type=float)

    p = sub.add_parser("train", help="train one model on one fold")
    common(p)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--folds", type=int)
    p.add_argument("--by-session", action="store_true")
    p.add_argument("--out-dir", default="runs")

    p = sub.add_parser("evaluate", help="score a checkpoint on every utterance of a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--variant", type=str.upper, choices=VARIANTS, metavar="{are,tre,mdre,mdrea}",
                   help="expected variant; mismatch is an error")
    p.add_argument("--features-dir")

    p = sub.add_parser("run-experiment", help="k-fold x repeats training and evaluation")
    common(p)
    p.add_argument("--folds", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--by-session", action="store_true")
    p.add_argument("--out-dir", default="runs")
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _features(records, features_dir, spec: FrameSpec) -> dict:
    if features_dir is None:
        return features_for(records, None, spec, threads=thread_cap())
    out = {}
    for rec in records:
        path = Path(features_dir) / f"{rec.id}.dcf"
        if not path.is_file():
            raise DualcoderError(f"missing feature file {path}")
        out[rec.id] = read_feature_file(path)
    return out


def cmd_gen_synthetic(args) -> int:
    corpus = gen_synthetic(args.n, args.seed, args.out, noise=args.noise)
    log.info("wrote %d utterances (seed %d) to %s", len(corpus.records), args.seed, args.out)
    print(corpus.manifest)
    return 0


def cmd_extract_features(args) -> int:
    spec = FrameSpec(args.frame_ms or 25.0, args.hop_ms or 10.0)
    records = load_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    features = features_for(records, None, spec, threads=thread_cap())
    for rec in records:
        write_feature_file(out_dir / f"{rec.id}.dcf", features[rec.id], spec)
    log.info("wrote %d feature files to %s", len(records), out_dir)
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    records = load_manifest(args.manifest)
    splits = split_folds(records, k=cfg.folds, seed=cfg.seed, by_session=cfg.by_session)
    if not 0 <= args.fold < len(splits):
        raise ConfigError(f"--fold must be in [0, {len(splits)})")
    split = splits[args.fold]
    run_seed = run_seed_for(cfg.seed, split.fold, 0)
    log.info("training %s on fold %d with run seed %d (base seed %d)", cfg.variant, split.fold, run_seed, cfg.seed)
    features = _features(records, args.features_dir, cfg.frame_spec())
    trained = train(records, split, cfg.model_config(), run_seed, cfg.train_config(), features)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.variant.lower()}_fold{split.fold}"
    save_trained(out_dir / f"{stem}.ckpt", trained, {"run_config": cfg.to_dict()})
    (out_dir / f"{stem}_log.json").write_text(
        json.dumps({"run_config": cfg.to_dict(), "run_seed": run_seed, "log": trained.log}, indent=2, sort_keys=True) + "\n"
    )
    print(json.dumps({"checkpoint": str(out_dir / f"{stem}.ckpt"), "best_epoch": trained.best_epoch,
                      "best_dev_wap": trained.best_dev_wap}))
    return 0


def cmd_evaluate(args) -> int:
    trained = load_trained(args.checkpoint)
    variant = trained.model.config.variant
    if args.variant and args.variant != variant:
        raise DualcoderError(f"checkpoint holds a {variant} model, not {args.variant}")
    records = load_manifest(args.manifest)
    run_cfg = trained.info.get("run_config", {})
    spec = FrameSpec(run_cfg.get("frame_ms", 25.0), run_cfg.get("hop_ms", 10.0))
    features = _features(records, args.features_dir, spec)
    preds = trained.predict(records, features)
    labels = [r.label_index for r in records]
    result = {
        "checkpoint": str(args.checkpoint),
        "variant": variant,
        "n": len(records),
        "wap": weighted_average_precision(preds, labels),
        "confusion": confusion_matrix(preds, labels).tolist(),
        "run_config": run_cfg,
    }
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def cmd_run_experiment(args) -> int:
    cfg = resolve_config(args)
    records = load_manifest(args.manifest)
    features = _features(records, args.features_dir, cfg.frame_spec())
    report = run_experiment(records, cfg.model_config(), cfg.train_config(), folds=cfg.folds, repeats=cfg.repeats,
                            seed=cfg.seed, features=features, by_session=cfg.by_session)
    report.config["run_config"] = cfg.to_dict()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"report_{cfg.variant.lower()}"
    (out_dir / f"{stem}.json").write_text(report.to_json())
    table = report.format_table()
    (out_dir / f"{stem}.txt").write_text(table)
    sys.stdout.write(table)
    return 0


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "extract-features": cmd_extract_features,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "run-experiment": cmd_run_experiment,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        return COMMANDS[args.command](args)
    except (DualcoderError, OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
