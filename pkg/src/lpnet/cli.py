"""Command-line experiment runner.

Exit codes: 0 success, 1 runtime error, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import archive, config
from .core import RepresentationSet, build_network
from .data import LabeledDataset, gaussian_classes, knn_evaluate, load_idx, normalize_dataset
from .errors import ConfigError, LPNetError
from .training import theorem1_experiment, train
from .transforms import propagate

log = logging.getLogger("lpnet")

METRICS_HEADER = ["iteration", "level", "r1", "r2", "r3", "a_term", "u_term", "total",
                  "goal_error", "elapsed_ms"]
ARCHIVE_NAME = "weights.lpnw"
TRAIN_REPS_NAME = "train_representations.npy"


class MetricsWriter:
    """Per-iteration records as long-format CSV plus one JSON object per line."""

    def __init__(self, out: Path):
        self.csv_file = open(out / "metrics.csv", "w", newline="")
        self.jsonl_file = open(out / "metrics.jsonl", "w")
        self.csv = csv.writer(self.csv_file)
        self.csv.writerow(METRICS_HEADER)

    def __call__(self, state, record):
        levels = {}
        for l, b in record["levels"].items():
            ge = record["goal_errors"].get(l)
            self.csv.writerow([record["iteration"], l, *(repr(float(v)) for v in
                               (b.r1, b.r2, b.r3, b.a_term, b.u_term, b.total)),
                               "" if ge is None else repr(ge), f"{record['elapsed_ms']:.3f}"])
            levels[str(l)] = b.as_dict()
        self.jsonl_file.write(json.dumps({
            "iteration": record["iteration"],
            "mask": record["mask"],
            "levels": levels,
            "goal_errors": {str(l): v for l, v in record["goal_errors"].items()},
            "risk": {str(l): v for l, v in record.get("risk", {}).items()},
            "elapsed_ms": record["elapsed_ms"],
        }) + "\n")
        self.csv_file.flush()
        self.jsonl_file.flush()

    def close(self):
        self.csv_file.close()
        self.jsonl_file.close()


def _load_split(cfg: config.ExperimentConfig, split: str) -> LabeledDataset | None:
    images = getattr(cfg.data, f"{split}_images")
    labels = getattr(cfg.data, f"{split}_labels")
    if images is None or labels is None:
        return None
    ds = load_idx(images, labels)
    per_class = cfg.data.subset
    if split == "train" or per_class is not None:
        ds = ds.balanced(per_class)
    return normalize_dataset(ds) if cfg.data.normalize else ds


def _evaluate(net, train_reps, train_ds, test_ds, k) -> float:
    test_top = propagate(net.forward, net.thresholds, test_ds.images)[-1]
    return knn_evaluate(train_reps, train_ds.labels, test_top, test_ds.labels, k)


def _out_dir(args, cfg) -> Path:
    out = Path(args.out) if args.out else Path("runs") / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve(args) -> config.ExperimentConfig:
    cfg = config.load(args.config)
    return cfg.with_overrides(seed=args.seed, mode=args.mode, subset=args.subset)


def cmd_train(args) -> int:
    cfg = _resolve(args)
    train_ds = _load_split(cfg, "train")
    if train_ds is None:
        raise ConfigError("[data] train_images and train_labels are required for train")
    test_ds = _load_split(cfg, "test")
    out = _out_dir(args, cfg)
    net = build_network(cfg.dims, cfg.hyper, cfg.goals())
    writer = MetricsWriter(out)
    start = time.perf_counter()
    try:
        state = train(net, train_ds.representation(), cfg.hyper, callback=writer)
    finally:
        writer.close()
    elapsed = time.perf_counter() - start
    archive.save(net, out / ARCHIVE_NAME)
    if net.depth in state.Y:
        train_reps = state.Y[net.depth]
    else:  # zero iterations: no gNT representations were estimated
        train_reps = propagate(net.forward, net.thresholds, train_ds.images)[-1]
    np.save(out / TRAIN_REPS_NAME, train_reps)

    summary = {"name": cfg.name, "config_hash": cfg.digest(), "seed": cfg.hyper.seed,
               "mode": cfg.hyper.mode, "iterations": cfg.hyper.iterations,
               "elapsed_s": elapsed, "final_accuracy": None, "baseline_accuracy": None}
    if test_ds is not None:
        summary["final_accuracy"] = _evaluate(net, train_reps, train_ds, test_ds, cfg.hyper.knn_k)
        summary["baseline_accuracy"] = knn_evaluate(train_ds.images, train_ds.labels,
                                                    test_ds.images, test_ds.labels,
                                                    cfg.hyper.knn_k)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out) if args.out else Path("runs") / cfg.name
    net = archive.load(out / ARCHIVE_NAME)
    train_ds, test_ds = _load_split(cfg, "train"), _load_split(cfg, "test")
    if train_ds is None or test_ds is None:
        raise ConfigError("[data] needs both train and test files for eval")
    reps_path = out / TRAIN_REPS_NAME
    if reps_path.exists():
        train_reps = np.load(reps_path)
    else:
        log.warning("%s missing; using sNT representations of the training data", reps_path)
        train_reps = propagate(net.forward, net.thresholds, train_ds.images)[-1]
    accuracy = _evaluate(net, train_reps, train_ds, test_ds, cfg.hyper.knn_k)
    result = {"accuracy": accuracy, "config_hash": cfg.digest(), "k": cfg.hyper.knn_k}
    (out / "eval.json").write_text(json.dumps(result, indent=2) + "\n")
    print(json.dumps(result))
    return 0


def cmd_theorem1(args) -> int:
    cfg = _resolve(args)
    if cfg.goal_level is None:
        raise ConfigError("[network] goal_level is required for theorem1")
    syn = cfg.synthetic
    data: RepresentationSet = gaussian_classes(cfg.dims[0], syn.num_classes, syn.per_class,
                                               seed=syn.seed, separation=syn.separation,
                                               spread=syn.spread)
    out = _out_dir(args, cfg)
    net = build_network(cfg.dims, cfg.hyper, cfg.goals())
    writer = MetricsWriter(out)
    try:
        report = theorem1_experiment(net, data, cfg.hyper, cfg.goal_level, syn.epsilon,
                                     callback=writer)
    finally:
        writer.close()
    archive.save(net, out / ARCHIVE_NAME)
    with open(out / "goal_error.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "goal_error"])
        w.writerows((i + 1, repr(v)) for i, v in enumerate(report.values))
    summary = {"name": cfg.name, "config_hash": cfg.digest(), "goal_level": cfg.goal_level,
               "first": report.values[0] if report.values else None,
               "final": report.values[-1] if report.values else None,
               "reduction": report.reduction, "epsilon": report.epsilon,
               "first_below": report.first_below, "hypothesis_ok": report.hypothesis_ok}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return 0


def cmd_inspect(args) -> int:
    info = archive.inspect(args.archive)
    print(json.dumps({"depth": info.depth, "dims": list(info.dims),
                      "thresholds": info.thresholds, "tied": info.tied,
                      "checksum": info.checksum, "bytes": info.size}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lpnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="INI experiment file")
        p.add_argument("--seed", type=int, help="override [experiment] seed")
        p.add_argument("--mode", choices=["syn", "asyn"], help="override [experiment] mode")
        p.add_argument("--subset", type=int, metavar="N", help="use N samples per class")
        p.add_argument("--out", metavar="DIR", help="run directory (default runs/<name>)")
        p.set_defaults(func=func)

    experiment("train", cmd_train, "train a network and write its artifacts")
    experiment("eval", cmd_eval, "k-NN accuracy of a trained run")
    experiment("theorem1", cmd_theorem1, "single-goal propagation experiment on synthetic data")
    p = sub.add_parser("inspect-archive", help="print the header of a weight archive")
    p.add_argument("archive")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (LPNetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
