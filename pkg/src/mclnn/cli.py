"""Command-line entry point: mask-dump, synth, train, evaluate.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal failure.
"""

import argparse
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from .data import ClipTooShortError, FeatureFileError, FoldManifest, synth_dataset, write_dataset
from .estimator import MCLNNClassifier
from .evaluation import confusion, fold_rotation, format_confusion, run_cross_validation
from .mask import MaskSpec, MaskSpecError, build_mask, format_mask
from .network import SegmentWidthError, save_network
from .training import TrainConfig, metrics_csv

logger = logging.getLogger("mclnn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
SEED_ENV = "MCLNN_SEED"

MODEL_DEFAULTS = {"dense": [100, 100], "extra_frames": 1, "transfer": "prelu"}
DATA_DEFAULTS = {"delta": False, "hop": None, "segment_width": None, "standardize": True}
TRAIN_KEYS = ("epochs", "batch_size", "learning_rate", "clnn_dropout", "dense_dropout",
              "patience")


class ConfigError(ValueError):
    pass


def _layer_echo(spec):
    d = {"type": spec.get("type", "mclnn"), "nodes": spec["nodes"], "order": spec["order"]}
    if d["type"] == "mclnn":
        d["bandwidth"] = spec.get("bandwidth")
        d["overlap"] = spec.get("overlap")
    return d


def resolve_config(raw, base_dir=".", seed=None):
    """Materialize every default into a self-describing config dict.

    Seed precedence: explicit ``seed`` argument > ``MCLNN_SEED`` > config.
    """
    try:
        model = dict(raw["model"])
        data = dict(raw["data"])
    except (KeyError, TypeError):
        raise ConfigError("config needs 'model' and 'data' sections") from None
    unknown = set(raw) - {"model", "data", "train", "seed"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for key in ("layers", "classes"):
        if key not in model:
            raise ConfigError(f"model section is missing {key!r}")
    if "manifest" not in data:
        raise ConfigError("data section is missing 'manifest'")

    if seed is None and os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    if seed is None:
        seed = raw.get("seed", 0)

    manifest = Path(data["manifest"])
    if not manifest.is_absolute():
        manifest = Path(base_dir) / manifest
    train_defaults = TrainConfig().to_dict()
    train = {k: raw.get("train", {}).get(k, train_defaults[k]) for k in TRAIN_KEYS}
    extra = set(raw.get("train", {})) - set(TRAIN_KEYS)
    if extra:
        raise ConfigError(f"unknown train keys: {sorted(extra)}")
    return {
        "seed": int(seed),
        "model": {
            "layers": [_layer_echo(s) for s in model["layers"]],
            "dense": list(model.get("dense", MODEL_DEFAULTS["dense"])),
            "extra_frames": model.get("extra_frames", MODEL_DEFAULTS["extra_frames"]),
            "classes": model["classes"],
            "transfer": model.get("transfer", MODEL_DEFAULTS["transfer"]),
        },
        "data": {
            "manifest": str(manifest.resolve()),
            **{k: data.get(k, v) for k, v in DATA_DEFAULTS.items()},
        },
        "train": train,
    }


def load_config(path, seed=None):
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return resolve_config(raw, path.parent, seed)


def estimator_from_config(cfg):
    model, data, train = cfg["model"], cfg["data"], cfg["train"]
    try:
        est = MCLNNClassifier(
            layers=model["layers"], dense=model["dense"], extra_frames=model["extra_frames"],
            n_classes=model["classes"], transfer=model["transfer"], hop=data["hop"],
            delta=data["delta"], standardize=data["standardize"], random_state=cfg["seed"],
            **train,
        )
        # fail fast on a malformed architecture
        est.model_config(1, model["classes"])
        est.train_config()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    q = est.model_config(1, model["classes"]).segment_width
    if data["segment_width"] is not None and data["segment_width"] != q:
        raise SegmentWidthError(f"segment width q={data['segment_width']}, model requires {q}")
    return est


def describe(cfg, feature_len=None):
    est = estimator_from_config(cfg)
    mc = est.model_config(feature_len or 1, cfg["model"]["classes"])
    lines = []
    in_len = feature_len
    for i, spec in enumerate(mc.layers, 1):
        text = f"layer {i}: {spec.type} nodes={spec.nodes} n={spec.order} d={spec.window}"
        if spec.type == "mclnn":
            text += f" bw={spec.bandwidth} ov={spec.overlap}"
        if in_len is not None:
            text += f" l={in_len}"
        lines.append(text)
        in_len = spec.nodes
    lines.append(f"dense: {list(mc.dense)} -> softmax({mc.classes})")
    lines.append(f"segment width {mc.describe_width()}")
    return "\n".join(lines)


def cmd_mask_dump(args):
    mask = build_mask(MaskSpec(args.bw, args.ov, args.l, args.e))
    print(format_mask(mask))
    return EXIT_OK


def cmd_synth(args):
    if args.classes < 2:
        raise ConfigError(f"--classes must be >= 2, got {args.classes}")
    if args.clips < args.classes or args.clips % args.classes:
        raise ConfigError(f"--clips ({args.clips}) must be a positive multiple of --classes")
    seed = _seed(args)
    if seed is None:
        seed = 0
    clips, manifest = synth_dataset(args.classes, args.clips // args.classes, args.l,
                                    args.frames, seed)
    try:
        path = write_dataset(args.out, clips, manifest)
    except OSError as exc:
        raise FeatureFileError(f"cannot write to {args.out}: {exc}") from None
    print(f"wrote {len(clips)} clips and {path}")
    return EXIT_OK


def _load_clips(manifest, records):
    return ([manifest.load(r) for r in records],
            np.array([r.label for r in records], dtype=np.int64))


def cmd_train(args):
    cfg = load_config(args.config, _seed(args))
    if args.dry_run:
        print(describe(cfg))
        return EXIT_OK
    est = estimator_from_config(cfg)
    manifest = FoldManifest.read(cfg["data"]["manifest"])
    folds = manifest.folds
    if len(folds) < 3:
        raise FeatureFileError(f"need at least 3 folds for train/validation/test, got {folds}")
    train_f, val_f, test_f = fold_rotation(folds, 0)
    x_tr, y_tr = _load_clips(manifest, manifest.in_folds(train_f))
    x_va, y_va = _load_clips(manifest, manifest.in_folds([val_f]))
    x_te, y_te = _load_clips(manifest, manifest.in_folds([test_f]))
    est.fit(x_tr, y_tr, validation_data=(x_va, y_va))
    print(describe(cfg, est.model_config_.feature_len))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_network(est.network_, out / "model.mcln")
    (out / "metrics.csv").write_text(metrics_csv(est.history_))
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    report = confusion(y_te, est.predict(x_te), cfg["model"]["classes"])
    print(f"test fold {test_f}: accuracy {report.overall_accuracy:.4f} "
          f"({int(np.trace(report.matrix))}/{report.total})")
    return EXIT_OK


def cmd_evaluate(args):
    cfg = load_config(args.config, _seed(args))
    est = estimator_from_config(cfg)
    manifest = FoldManifest.read(cfg["data"]["manifest"])
    if len(manifest.folds) != args.folds:
        raise FeatureFileError(
            f"manifest has {len(manifest.folds)} folds {manifest.folds}, --folds is {args.folds}"
        )
    result = run_cross_validation(manifest, est, n_folds=args.folds, config_echo=cfg)
    text = result.to_json()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.json").write_text(text)
    print(format_confusion(result.confusion))
    for i, acc in enumerate(result.per_fold_accuracy):
        print(f"rotation {i}: accuracy {acc:.4f}")
    print(f"mean accuracy {result.mean_accuracy:.4f}")
    if not args.out:
        sys.stdout.write(text)
    return EXIT_OK


def _seed(args):
    return getattr(args, "seed", None)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="mclnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask-dump", help="print a binary mask as a 0/1 grid")
    p.add_argument("--l", type=int, required=True, help="feature length (rows)")
    p.add_argument("--e", type=int, required=True, help="hidden nodes (columns)")
    p.add_argument("--bw", type=int, required=True, help="bandwidth")
    p.add_argument("--ov", type=int, required=True, help="overlap (may be negative)")
    p.set_defaults(func=cmd_mask_dump)

    p = sub.add_parser("synth", help="write a synthetic band-limited dataset")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--clips", type=int, default=30, help="total number of clips")
    p.add_argument("--l", type=int, default=16)
    p.add_argument("--frames", type=int, default=40)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on one fold rotation and save the model")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dry-run", action="store_true", help="print the architecture and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="k-fold cross-validation with clip voting")
    p.add_argument("--config", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--out", default=None, help="directory for results.json")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FeatureFileError, ClipTooShortError, SegmentWidthError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, MaskSpecError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AssertionError, RuntimeError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
