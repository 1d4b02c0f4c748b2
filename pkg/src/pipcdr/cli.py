"""Command-line entry point: gen-data, train, sweep, eval.

Exit codes: 0 success, 2 configuration/usage error, 1 runtime failure.
"""
import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import data as data_mod
from . import metrics
from .errors import ConfigInvalid, LengthMismatch, ParseError, RaggedRows
from .networks import save_checkpoint
from .numerics import make_rng, save_matrix_csv
from .trainer import TrainConfig, train

log = logging.getLogger("pipcdr")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

# data-generation keys and their defaults (the committed 8-cluster benchmark)
DATA_KEYS = {
    "n_clusters": 8,
    "per_cluster": 100,
    "ambient_dim": 32,
    "separation": 10.0,
    "noise": 1.0,
    "imbalance": 1.0,
    "data_seed": 0,
    "name": "gmm8",
}
PATH_KEYS = {"out_dir": None, "data_dir": None}
SWEEP_PARAMS = {"r": "kmeans_every", "sigma": "sigma", "w": "w", "K": "K", "queue_capacity": "queue_capacity"}
SWEEP_COLUMNS = ["value", "status", "epochs", "nmi", "ami", "ari", "acc", "imbalance_ratio",
                 "std_uniformity", "loss_pip", "loss_cdr", "kmeans_runs", "error"]


@dataclasses.dataclass
class ExperimentConfig:
    train: TrainConfig
    data: dict
    out_dir: str = None
    data_dir: str = None

    def echo(self):
        out = dataclasses.asdict(self.train)
        out.update(self.data)
        out["out_dir"] = self.out_dir
        out["data_dir"] = self.data_dir
        return out


def _coerce(key, raw, default):
    kind = type(default) if default is not None else str
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigInvalid(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config_text(text):
    """Parse ``key = value`` lines; '#' starts a comment. Unknown keys are errors."""
    train_defaults = {f.name: f.default for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in train_defaults:
            values[key] = _coerce(key, raw, train_defaults[key])
        elif key in DATA_KEYS:
            values[key] = _coerce(key, raw, DATA_KEYS[key])
        elif key in PATH_KEYS:
            values[key] = raw
        else:
            raise ConfigInvalid(f"line {lineno}: unknown config key {key!r}")
    tcfg = TrainConfig(**{k: v for k, v in values.items() if k in train_defaults})
    dcfg = {k: values.get(k, d) for k, d in DATA_KEYS.items()}
    return ExperimentConfig(tcfg, dcfg, values.get("out_dir"), values.get("data_dir"))


def load_config(path):
    try:
        with open(path) as fh:
            return parse_config_text(fh.read())
    except FileNotFoundError:
        raise ConfigInvalid(f"config file not found: {path}") from None


def _resolve_out(args, cfg):
    out = args.out or cfg.out_dir or os.environ.get("PIPCDR_OUT_DIR")
    if not out:
        raise ConfigInvalid("no output directory: pass --out, set out_dir, or PIPCDR_OUT_DIR")
    os.makedirs(out, exist_ok=True)
    return out


def _apply_seed(args, cfg):
    if getattr(args, "seed", None) is not None:
        cfg.train = cfg.train.replace(seed=args.seed)
        cfg.data["data_seed"] = args.seed
    return cfg


def generate(dcfg):
    rng = make_rng(dcfg["data_seed"])
    d = data_mod.gen_gaussian_mixture(dcfg["n_clusters"], dcfg["per_cluster"], dcfg["ambient_dim"],
                                      dcfg["separation"], dcfg["noise"], rng, name=dcfg["name"])
    if dcfg["imbalance"] < 1.0:
        d = data_mod.long_tail_subsample(d, dcfg["imbalance"], rng)
    d.meta["seed"] = dcfg["data_seed"]
    return d


def load_dataset(cfg):
    if not cfg.data_dir:
        return generate(cfg.data)
    d = data_mod.load_csv(os.path.join(cfg.data_dir, "features.csv"))
    labels_path = os.path.join(cfg.data_dir, "labels.csv")
    if os.path.exists(labels_path):
        d.labels = data_mod.load_labels(labels_path)
        if d.labels.size != d.n:
            raise LengthMismatch(f"{labels_path} has {d.labels.size} labels for {d.n} rows")
    return d


def cmd_gen_data(args):
    cfg = _apply_seed(args, load_config(args.config))
    out = _resolve_out(args, cfg)
    d = generate(cfg.data)
    data_mod.write_dataset(d, out)
    print(os.path.join(out, "manifest.json"))
    return EXIT_OK


def run_training(cfg, out):
    """Train one configuration and write its artifacts under ``out``."""
    os.makedirs(out, exist_ok=True)
    d = load_dataset(cfg)
    t0 = time.perf_counter()
    state, history = train(d, cfg.train, checkpoint_dir=out)
    wall = time.perf_counter() - t0
    metrics.write_reports_csv(os.path.join(out, "metrics.csv"), history)
    save_checkpoint(os.path.join(out, "checkpoint.npz"), state.stack, {"epoch": state.epoch})
    np.savetxt(os.path.join(out, "pseudo_labels.csv"), state.labels, fmt="%d")
    if state.pseudo is not None:
        save_matrix_csv(os.path.join(out, "centroids.csv"), state.pseudo.centroids)
    final = dataclasses.asdict(history[-1]) if history else {}
    final = {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in final.items()}
    summary = {"config": cfg.echo(), "final": final, "epochs_run": state.epoch,
               "kmeans_epochs": state.kmeans_epochs, "wall_clock_s": wall}
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return final, state


def cmd_train(args):
    cfg = _apply_seed(args, load_config(args.config))
    cfg.train.validate()
    out = _resolve_out(args, cfg)
    run_training(cfg, out)
    print(os.path.join(out, "summary.json"))
    return EXIT_OK


def _parse_values(param, raw):
    key = SWEEP_PARAMS[param]
    default = getattr(TrainConfig, key)
    return [_coerce(param, v, default) for v in raw.split(",") if v.strip()]


def _sweep_one(cfg, key, value, out):
    row = {"value": value, "status": "ok", "error": ""}
    try:
        run_cfg = dataclasses.replace(cfg, train=cfg.train.replace(**{key: value}))
        run_cfg.train.validate()
        final, _ = run_training(run_cfg, out)
        row.update({c: final.get(c) for c in SWEEP_COLUMNS if c in final})
        row["epochs"] = run_cfg.train.epochs
    except Exception as exc:  # a failed run is recorded, the sweep goes on
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row


def cmd_sweep(args):
    cfg = _apply_seed(args, load_config(args.config))
    if args.param not in SWEEP_PARAMS:
        raise ConfigInvalid(f"cannot sweep {args.param!r}; choose from {sorted(SWEEP_PARAMS)}")
    out = _resolve_out(args, cfg)
    key = SWEEP_PARAMS[args.param]
    values = _parse_values(args.param, args.values)
    dirs = [os.path.join(out, f"run_{i:03d}") for i in range(len(values))]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_one, [cfg] * len(values), [key] * len(values), values, dirs))
    else:
        rows = [_sweep_one(cfg, key, v, d) for v, d in zip(values, dirs)]
    with open(os.path.join(out, "sweep.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["param"] + SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({"param": args.param, **{c: _fmt(row.get(c)) for c in SWEEP_COLUMNS}})
    print(os.path.join(out, "sweep.csv"))
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_RUNTIME


def _fmt(v):
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def cmd_eval(args):
    pred = data_mod.load_labels(args.pred)
    truth = data_mod.load_labels(args.truth)
    if pred.size != truth.size:
        raise LengthMismatch(f"{args.pred} has {pred.size} labels, {args.truth} has {truth.size}")
    k = args.k or int(np.unique(truth).size)
    print(json.dumps(metrics.evaluate(truth, pred, k), sort_keys=True))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="pipcdr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_common(sp):
        sp.add_argument("--config", required=True, help="key=value experiment config")
        sp.add_argument("--out", help="output directory (falls back to out_dir, then $PIPCDR_OUT_DIR)")
        sp.add_argument("--seed", type=int, help="overrides seed and data_seed")
        return sp

    with_common(sub.add_parser("gen-data", help="write a synthetic dataset")).set_defaults(func=cmd_gen_data)
    with_common(sub.add_parser("train", help="train and write metrics/checkpoint")).set_defaults(func=cmd_train)
    sw = with_common(sub.add_parser("sweep", help="one run per parameter value"))
    sw.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
    sw.add_argument("--values", required=True, help="comma-separated list")
    sw.add_argument("--jobs", type=int, default=1, help="concurrent runs")
    sw.set_defaults(func=cmd_sweep)
    ev = sub.add_parser("eval", help="score predicted labels against ground truth")
    ev.add_argument("pred")
    ev.add_argument("truth")
    ev.add_argument("--k", type=int, help="expected cluster count for the imbalance ratio")
    ev.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigInvalid, LengthMismatch, ParseError, RaggedRows) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
