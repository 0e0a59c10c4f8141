"""Command-line entry point.

    sbdropout verify [--out DIR]
    sbdropout train   --config PATH [--seed N] [--out DIR]
    sbdropout sweep   --config PATH [--seed N] [--out DIR] [--parallel N]
    sbdropout mc      --config PATH [--seed N] [--out DIR] [--parallel N]
    sbdropout compare --config PATH [--seed N] [--out DIR] [--parallel N]

Exit status: 0 success, 2 configuration error, 3 training diverged,
4 verification (or Monte Carlo check) failed, 5 output could not be written.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, config_from_dict, load_json
from .experiments import compare_generalization, map_ordered, mc_check, sweep_cells, training_summary
from .training import DivergenceError
from .verification import run_verify

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_VERIFY_FAILED = 4
EXIT_IO = 5

CSV_COLUMNS = ("epoch", "train_loss", "test_loss", "test_accuracy", "norm_w", "norm_x",
               "ratio_w_over_x", "norm_x_mask")

logger = logging.getLogger("sbdropout")

_TASK_FOR_COMMAND = {"train": "train", "sweep": "sweep", "mc": "mc_check", "compare": "compare"}


def _clean(obj):
    """Make a result JSON-safe: non-finite floats become null."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps(obj) -> str:
    # json writes floats with repr(), the shortest string that round-trips exactly
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def metrics_csv(records: list[dict]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in records:
        row = dict(r, norm_x=r["norm_x_batch_mean"])
        lines.append(",".join(_fmt(row[c]) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def run_train(cfg: ExperimentConfig, out_dir: Path) -> int:
    summary = training_summary(cfg)
    _write(out_dir / "metrics.csv", metrics_csv(summary["records"]))
    _write(out_dir / "summary.json", dumps(_without_records(summary)))
    if summary["status"] != "ok":
        logger.error("training diverged: %s", summary["error"])
        return EXIT_DIVERGED
    return EXIT_OK


def _without_records(summary: dict) -> dict:
    return {k: v for k, v in summary.items() if k != "records"}


def run_sweep(cfg: ExperimentConfig, out_dir: Path, parallel: int) -> int:
    cells = sweep_cells(cfg)
    summaries = map_ordered(training_summary, cells, parallel)
    for i, summary in enumerate(summaries):
        _write(out_dir / f"cell_{i:03d}.csv", metrics_csv(summary["records"]))
    grid = ({"keep_prob": cfg.sweep.keep_prob} if cfg.model == "linear" else
            {"keep_prob_input": cfg.sweep.keep_prob_input,
             "keep_prob_hidden": cfg.sweep.keep_prob_hidden})
    _write(out_dir / "sweep.json",
           dumps({"grid": grid, "cells": [_without_records(s) for s in summaries]}))
    return EXIT_OK if all(s["status"] == "ok" for s in summaries) else EXIT_DIVERGED


def run_mc(cfg: ExperimentConfig, out_dir: Path, parallel: int) -> int:
    report = mc_check(cfg, parallel)
    _write(out_dir / "mc.json", dumps(report))
    return EXIT_OK if report["passed"] else EXIT_VERIFY_FAILED


def run_compare(cfg: ExperimentConfig, out_dir: Path, parallel: int) -> int:
    try:
        summary = compare_generalization(cfg, parallel=parallel)
    except DivergenceError as exc:
        logger.error("%s", exc)
        _write(out_dir / "compare.json", dumps({"status": "diverged", "error": str(exc)}))
        return EXIT_DIVERGED
    _write(out_dir / "compare.json", dumps(summary))
    return EXIT_OK


def run_verify_command(out_dir: Path | None) -> int:
    report = run_verify()
    for check in report["checks"]:
        tag = "PASS" if check["passed"] else "FAIL"
        if not check["must_pass"]:
            tag = "INFO"
        print(f"[{tag}] {check['name']}: measured={check['measured']} tol={check['tolerance']}",
              file=sys.stderr)
    text = dumps(report)
    if out_dir is None:
        sys.stdout.write(text)
    else:
        _write(out_dir / "verify.json", text)
    return EXIT_OK if report["passed"] else EXIT_VERIFY_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbdropout",
                                     description="Self-Balanced Dropout experiments and checks")
    sub = parser.add_subparsers(dest="command", required=True)
    verify = sub.add_parser("verify", help="run the closed-form oracle battery")
    verify.add_argument("--out", type=Path, default=None, help="write verify.json here")
    for name, help_text in (("train", "train one model"), ("sweep", "grid over keep probabilities"),
                            ("mc", "Monte Carlo check of the expected objectives"),
                            ("compare", "paired seeds: standard vs self-balanced")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, required=True)
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", type=Path, default=None, help="overrides output.dir")
        p.add_argument("--parallel", type=int, default=None, help="overrides output.parallel")
    return parser


def load_config(path: Path, command: str, seed: int | None, parallel: int | None) -> ExperimentConfig:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    doc = load_json(text)
    if not isinstance(doc, dict):
        raise ConfigError(f"<root>: expected a JSON object, got {type(doc).__name__}")
    task = _TASK_FOR_COMMAND[command]
    if doc.get("task", task) != task:
        raise ConfigError(f"task: config says {doc['task']!r} but '{command}' runs {task!r}")
    doc = dict(doc, task=task)
    if seed is not None:
        doc["seed"] = seed
    if parallel is not None:
        doc["output"] = dict(doc.get("output", {}), parallel=parallel)
    return config_from_dict(doc)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return run_verify_command(args.out)
        cfg = load_config(args.config, args.command, args.seed, args.parallel)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    out_dir = args.out if args.out is not None else Path(cfg.output.dir)
    try:
        if args.command == "train":
            return run_train(cfg, out_dir)
        if args.command == "sweep":
            return run_sweep(cfg, out_dir, cfg.output.parallel)
        if args.command == "mc":
            return run_mc(cfg, out_dir, cfg.output.parallel)
        return run_compare(cfg, out_dir, cfg.output.parallel)
    except OSError as exc:
        logger.error("cannot write results to %s: %s", out_dir, exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
