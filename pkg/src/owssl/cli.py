"""Command-line entry point: ``owssl {train,evaluate,estimate,sweep,gen-data}``.

Exit status is 0 on success, 2 for configuration errors and 1 for runtime
failures. Set ``OWSSL_LOG_LEVEL`` (DEBUG, INFO, WARNING...) for log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, dump_config, load_config, to_dict
from .data import SplitDataset, from_csv, generate, load_binary, save_binary, to_csv
from .estimate import estimate_class_count
from .model import load_checkpoint, save_checkpoint
from .train import evaluate_params, train

log = logging.getLogger("owssl")

SCHEMA_VERSION = 1
SWEEP_AXES = ("novel_fraction", "temperature", "class_estimate_error", "imbalance_factor")
CURVE_FIELDS = ("epoch", "lr", "loss", "seen_acc", "novel_acc", "all_acc", "prior")
SWEEP_FIELDS = ("axis", "value", "num_seen", "num_novel", "num_novel_heads", "prior_mode",
                "seen_acc", "novel_acc", "all_acc", "removed_count")


def _num(x) -> str:
    """Shortest round-tripping text for a float; empty for NaN."""
    x = float(x)
    return "" if np.isnan(x) else repr(x)


def _config_echo(cfg: ExperimentConfig) -> dict:
    # the output location is not part of the experiment
    echo = to_dict(cfg)
    echo.pop("output_dir")
    return echo


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n")


def load_dataset(cfg: ExperimentConfig, data_path: str | None) -> SplitDataset:
    if data_path is None:
        return generate(cfg.dataset)
    p = Path(data_path)
    if not p.exists():
        raise ConfigError(f"dataset file {p} does not exist")
    return from_csv(p) if p.suffix == ".csv" else load_binary(p)


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RuntimeError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise RuntimeError(f"output directory {out} is not writable")
    return out


def _report_fields(report) -> dict:
    d = report.to_dict()
    d.pop("confusion")
    return d


def cmd_gen_data(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    ds = generate(cfg.dataset)
    to_csv(ds, out / "dataset.csv")
    save_binary(ds, out / "dataset.bin")
    log.info("wrote %d labeled, %d unlabeled, %d test rows", len(ds.X_l), len(ds.X_u),
             len(ds.X_test))
    return 0


def run_training(cfg: ExperimentConfig, ds: SplitDataset, out: Path) -> dict:
    """Train, then write curves, checkpoint, confusion and metrics into ``out``."""
    params, history = train(ds, cfg.train)
    report = evaluate_params(params, ds)
    with open(out / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_FIELDS)
        for r in history:
            w.writerow([r.epoch, _num(r.lr), _num(r.loss), _num(r.seen_acc), _num(r.novel_acc),
                        _num(r.all_acc), ";".join(_num(p) for p in r.prior)])
    save_checkpoint(out / "checkpoint.bin", params)
    if cfg.emit_confusion:
        report.confusion_csv(out / "confusion.csv")
    metrics = {
        "schema_version": SCHEMA_VERSION,
        "command": "train",
        "seed": cfg.train.seed,
        "epochs_run": len(history),
        **_report_fields(report),
        "config": _config_echo(cfg),
    }
    write_json(out / "metrics.json", metrics)
    return metrics


def cmd_train(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    ds = load_dataset(cfg, args.data)
    m = run_training(cfg, ds, out)
    log.info("seen %.4f novel %.4f all %.4f", m["seen_acc"] or 0, m["novel_acc"] or 0,
             m["all_acc"])
    return 0


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.bin"
    if not ckpt.exists():
        raise ConfigError(f"checkpoint {ckpt} does not exist")
    params = load_checkpoint(ckpt)
    ds = load_dataset(cfg, args.data)
    if params.input_dim != ds.dim:
        raise ConfigError(f"checkpoint expects {params.input_dim} features, data has {ds.dim}")
    report = evaluate_params(params, ds)
    if cfg.emit_confusion:
        report.confusion_csv(out / "eval_confusion.csv")
    write_json(out / "eval_metrics.json", {
        "schema_version": SCHEMA_VERSION,
        "command": "evaluate",
        "seed": cfg.dataset.seed,
        **_report_fields(report),
        "config": _config_echo(cfg),
    })
    return 0


def cmd_estimate(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    ds = load_dataset(cfg, args.data)
    X = np.concatenate([ds.X_l, ds.X_u])
    res = estimate_class_count(X, np.arange(len(ds.X_l)), ds.y_l, cfg.estimator)
    res.write_table(out / "estimate_scores.csv")
    write_json(out / "estimate.json", {
        "schema_version": SCHEMA_VERSION,
        "command": "estimate",
        "seed": cfg.estimator.seed,
        "estimate": res.estimate,
        "ground_truth": ds.num_classes,
        "labeled_classes": int(len(np.unique(ds.y_l))),
        "top_ks": res.top_ks.tolist(),
        "reassign": cfg.estimator.reassign,
        "table": "estimate_scores.csv",
        "config": _config_echo(cfg),
    })
    log.info("estimated %d classes (ground truth %d)", res.estimate, ds.num_classes)
    return 0


def parse_values(text: str) -> list[float]:
    """Comma-separated numbers; a trailing ``%`` divides by 100."""
    values = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            values.append(float(item[:-1]) / 100 if item.endswith("%") else float(item))
        except ValueError:
            raise ConfigError(f"cannot parse sweep value {item!r}") from None
    if not values:
        raise ConfigError("--values is empty")
    return values


def sweep_point(cfg: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    """Config for one sweep value; raises ConfigError outside the axis domain."""
    ds, tr = cfg.dataset, cfg.train
    if axis == "temperature":
        if value <= 0:
            raise ConfigError("temperature values must be positive")
        tr = dataclasses.replace(tr, temperature=value)
    elif axis == "imbalance_factor":
        if value < 1:
            raise ConfigError("imbalance_factor values must be >= 1")
        ds = dataclasses.replace(ds, imbalance_factor=value)
    elif axis == "novel_fraction":
        if not 0 < value < 1:
            raise ConfigError("novel_fraction values must lie in (0, 1)")
        C = ds.num_classes
        novel = min(C - 1, max(1, int(round(value * C))))
        ds = dataclasses.replace(ds, num_seen=C - novel, num_novel=novel)
    elif axis == "class_estimate_error":
        if value <= -1:
            raise ConfigError("class_estimate_error values must be > -100%")
        heads = max(1, int(round(ds.num_novel * (1 + value))))
        # a wrong head count has no oracle prior to match, so every point is balanced
        tr = dataclasses.replace(tr, num_novel_heads=heads, prior_mode="balanced")
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    return dataclasses.replace(cfg, dataset=ds, train=tr)


def _run_point(job) -> dict:
    cfg, axis, value, out = job
    out.mkdir(parents=True, exist_ok=True)
    m = run_training(cfg, generate(cfg.dataset), out)
    heads = cfg.train.num_novel_heads
    return {
        "axis": axis,
        "value": _num(value),
        "num_seen": cfg.dataset.num_seen,
        "num_novel": cfg.dataset.num_novel,
        "num_novel_heads": cfg.dataset.num_novel if heads is None else heads,
        "prior_mode": cfg.train.prior_mode,
        "seen_acc": "" if m["seen_acc"] is None else _num(m["seen_acc"]),
        "novel_acc": "" if m["novel_acc"] is None else _num(m["novel_acc"]),
        "all_acc": _num(m["all_acc"]),
        "removed_count": m["removed_count"],
    }


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    if args.axis is None or args.values is None:
        raise ConfigError("sweep needs --axis and --values")
    values = parse_values(args.values)
    try:
        points = [sweep_point(cfg, args.axis, v) for v in values]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = _out_dir(cfg)
    jobs = [(p, args.axis, v, out / f"point_{i:03d}") for i, (p, v) in enumerate(zip(points, values))]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_run_point, jobs))
    else:
        rows = [_run_point(j) for j in jobs]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return 0


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "estimate": cmd_estimate,
    "sweep": cmd_sweep,
    "gen-data": cmd_gen_data,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config; unspecified keys keep defaults")
    common.add_argument("--seed", type=int, help="seed for data, training and estimation")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config value, e.g. train.epochs=20 (repeatable)")
    common.add_argument("--ncd", action="store_true",
                        help="novel-class-discovery mode: novel-only unlabeled data and "
                             "pseudo-labels over novel heads only")
    common.add_argument("--print-config", action="store_true",
                        help="print the effective config and exit")

    parser = argparse.ArgumentParser(prog="owssl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write the synthetic dataset")
    p = sub.add_parser("train", parents=[common], help="train and evaluate a model")
    p.add_argument("--data", help="dataset file (.csv or binary) instead of generating one")
    p = sub.add_parser("evaluate", parents=[common], help="evaluate a saved checkpoint")
    p.add_argument("--checkpoint", help="defaults to <out>/checkpoint.bin")
    p.add_argument("--data", help="dataset file (.csv or binary) instead of generating one")
    p = sub.add_parser("estimate", parents=[common], help="estimate the total class count")
    p.add_argument("--data", help="dataset file (.csv or binary) instead of generating one")
    p = sub.add_parser("sweep", parents=[common], help="train once per value of one axis")
    p.add_argument("--axis", choices=SWEEP_AXES)
    p.add_argument("--values", help="comma-separated values, e.g. 0.1,0.2 or -25%%,0,25%%")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    return parser


def resolve_config(args) -> ExperimentConfig:
    try:
        return _resolve(args)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, output_dir=args.out)
    if args.ncd:
        cfg = dataclasses.replace(
            cfg,
            dataset=dataclasses.replace(cfg.dataset, novel_only_unlabeled=True),
            train=dataclasses.replace(cfg.train, ncd_mode=True),
        )
    return cfg


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("OWSSL_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        if args.print_config:
            sys.stdout.write(dump_config(cfg))
            return 0
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"owssl: config error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, OSError, ValueError, FloatingPointError) as exc:
        print(f"owssl: {args.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
