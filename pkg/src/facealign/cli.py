"""Command-line interface.

Subcommands: synth, train, eval, predict, bench. A single JSON config
file drives training; every training hyperparameter is a named key with
a full-scale default, and flags override the basics (--seed, --out).

Exit codes: 0 success, 1 usage/config error, 2 runtime/training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict

import numpy as np

from . import evaluation, modelio, training
from .augment import AugmentParams, augment_dataset
from .data import Dataset, load_dataset, normalize_pixels, read_pgm, \
    save_dataset
from .errors import FaceAlignError
from .geometry import clusters_for_pattern
from .network import forward_features
from .synth import synth_generate
from .training import StageConfig

log = logging.getLogger(__name__)

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class ConfigError(FaceAlignError):
    pass


def default_config() -> dict:
    """Full config with every hyperparameter at its full-scale default."""
    cfgs = training.reference_stage_configs()
    return {
        "pattern": 68,
        "seed": 0,
        "alpha": 125.0,
        "dtype": "float32",
        "data": {"train": None, "val": None, "test": None},
        "augment": {
            "enabled": False,
            "rotation_degrees": [-15.0, 0.0, 15.0],
            "scale_factors": [0.9, 1.0, 1.1],
            "translation_offsets": [-0.05, 0.0, 0.05],
            "do_flip": True,
            "compression_qualities": [90, 30],
        },
        "pretrain": asdict(cfgs["pretrain"]),
        "weighting": asdict(cfgs["weighting"]),
        "multicenter": asdict(cfgs["multicenter"]),
    }


def load_config(path: str | None) -> dict:
    cfg = default_config()
    if path is None:
        return cfg
    try:
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    for key, value in user.items():
        if key not in cfg:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(cfg[key], dict) and isinstance(value, dict):
            for sub, sval in value.items():
                if sub not in cfg[key]:
                    raise ConfigError(f"unknown config key {key}.{sub}")
                cfg[key][sub] = sval
        else:
            cfg[key] = value
    return cfg


def _stage_config(block: dict) -> StageConfig:
    return StageConfig(**block)


def _require_dataset(path, what: str, pattern: int) -> Dataset:
    if not path:
        raise ConfigError(f"config data.{what} is required")
    if not os.path.isdir(path):
        raise ConfigError(f"data.{what} directory {path!r} does not exist")
    ds = load_dataset(path)
    if ds.pattern != pattern:
        raise ConfigError(f"data.{what} has pattern {ds.pattern}, config "
                          f"says {pattern}")
    return ds


def _dtype(cfg: dict):
    name = cfg.get("dtype", "float32")
    if name not in ("float32", "float64"):
        raise ConfigError("dtype must be float32 or float64")
    return np.dtype(name)


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    ds = synth_generate(args.pattern, args.count, args.seed,
                        split=args.split)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = args.out or "."
    pattern = cfg["pattern"]
    train = _require_dataset(cfg["data"]["train"], "train", pattern)
    val = _require_dataset(cfg["data"]["val"], "val", pattern)
    test = None
    if cfg["data"]["test"]:
        test = _require_dataset(cfg["data"]["test"], "test", pattern)

    aug = cfg["augment"]
    if aug.get("enabled"):
        params = AugmentParams(
            tuple(aug["rotation_degrees"]), tuple(aug["scale_factors"]),
            tuple(aug["translation_offsets"]), bool(aug["do_flip"]),
            tuple(aug["compression_qualities"]))
        extra = augment_dataset(train, params, cfg["seed"])
        train = Dataset(train.pattern, train.split,
                        train.samples + extra)
        log.info("augmented training set to %d samples", len(train))

    cfgs = {name: _stage_config(cfg[name])
            for name in ("pretrain", "weighting", "multicenter")}
    models, rows = training.run_full_pipeline(
        train, val, cfgs, seed=cfg["seed"], alpha=cfg["alpha"], test=test,
        dtype=_dtype(cfg), dataset_name=os.path.basename(
            os.path.normpath(cfg["data"]["train"])))

    os.makedirs(out, exist_ok=True)
    spec = models.bm.spec
    modelio.save_model(models.bm, spec, os.path.join(out, "bm.mcl"))
    modelio.save_model(models.wm, spec, os.path.join(out, "wm.mcl"))
    modelio.save_model(models.am, spec, os.path.join(out, "am.mcl"))
    for i, head in enumerate(models.heads, start=1):
        snap = models.wm.clone()
        snap.set_head(0, head)
        modelio.save_model(snap, spec, os.path.join(out, f"head_{i}.mcl"))
    with open(os.path.join(out, "report.csv"), "w", newline="\n") as fh:
        fh.write(training.report_to_csv(rows))
    for row in rows:
        print(f"{row['model']:3s} {row['dataset']}: "
              f"mean error {row['mean_error']:.2f}, "
              f"failure rate {row['failure_rate']:.2f}")
    print(f"models and report.csv written to {out}")
    return 0


def cmd_eval(args) -> int:
    out = args.out or "."
    ds = load_dataset(args.data)
    os.makedirs(out, exist_ok=True)
    if args.occlude_cluster:
        if len(args.model) != 2:
            raise ConfigError("--occlude-cluster needs two --model paths "
                              "(weighting model, assembled model)")
        part = clusters_for_pattern(ds.pattern)
        try:
            cluster = part.index_of(args.occlude_cluster)
        except ValueError as exc:
            raise ConfigError(
                f"unknown cluster {args.occlude_cluster!r}; choose from "
                f"{part.names}") from exc
        _, wm = modelio.load_model(args.model[0])
        _, am = modelio.load_model(args.model[1])
        rows = evaluation.occlusion_report(wm, am, ds, cluster)
        path = os.path.join(out, "occlusion.csv")
        with open(path, "w", newline="\n") as fh:
            fh.write(evaluation.occlusion_to_csv(rows))
        for r in rows:
            print(f"{r['model']} {r['condition']:8s} {r['group']:7s} "
                  f"mean error {r['mean_error']:.2f}")
        print(f"wrote {path}")
        return 0

    report_rows = []
    for path in args.model:
        name = os.path.splitext(os.path.basename(path))[0]
        _, params = modelio.load_model(path)
        rep = evaluation.evaluate(params, 0, ds)
        report_rows.append({"model": name, "dataset": args.data,
                            "mean_error": rep.mean_error,
                            "failure_rate": rep.failure_rate})
        curve = evaluation.ced_curve(rep.per_sample_mean_errors)
        ced_path = os.path.join(out, f"ced_{name}.csv")
        with open(ced_path, "w", newline="\n") as fh:
            fh.write(evaluation.ced_to_csv(curve))
        print(f"{name}: mean error {rep.mean_error:.2f}, "
              f"failure rate {rep.failure_rate:.2f} "
              f"({rep.n_samples} samples)")
    with open(os.path.join(out, "report.csv"), "w", newline="\n") as fh:
        fh.write(training.report_to_csv(report_rows))
    print(f"wrote report.csv and CED curves to {out}")
    return 0


def cmd_predict(args) -> int:
    _, params = modelio.load_model(args.model)
    image = read_pgm(args.image)
    x, _ = forward_features(
        params, normalize_pixels(image)[None].astype(params.dtype), "infer")
    pred = (x @ params.head(args.head).value)[0]
    for j in range(0, pred.size, 2):
        print(f"{pred[j]:.17g} {pred[j + 1]:.17g}")
    return 0


def cmd_bench(args) -> int:
    _, params = modelio.load_model(args.model)
    rng = np.random.default_rng(args.seed or 0)
    images = np.floor(rng.uniform(0, 256, (4, 50, 50, 1))).astype(np.float32)
    fps = evaluation.fps_bench(params, 0, images, repeats=args.repeats)
    print(f"fps={fps:.2f}")
    return 0


# ------------------------------------------------------------------ parser

class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="facealign",
        description="Train and evaluate the multi-center face alignment "
                    "models.")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--pattern", type=int, required=True,
                   choices=(5, 29, 68))
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--split", default="train",
                   choices=("train", "val", "test"))
    p.set_defaults(func=cmd_synth, needs_out=True, needs_seed=True)

    p = sub.add_parser("train", help="run the full training pipeline")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate model(s) on a dataset")
    p.add_argument("--model", action="append", required=True,
                   help="model file; repeat to compare models")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--occlude-cluster",
                   help="cluster name for the occlusion comparison "
                        "(requires two --model paths: WM then AM)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="print landmarks for one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True, help="PGM face patch")
    p.add_argument("--head", type=int, default=0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="single-image inference speed")
    p.add_argument("--model", required=True)
    p.add_argument("--repeats", type=int, default=50)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "needs_out", False) and not args.out:
        parser.error("--out is required for this command")
    if getattr(args, "needs_seed", False) and args.seed is None:
        parser.error("--seed is required for this command")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except FaceAlignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
