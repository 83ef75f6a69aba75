"""Command-line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data_ingest, preprocess
from .config import derive_seed, load_config
from .experiment import evaluate_saved, render_markdown, run_predict_experiment, run_rank_experiment, sweep


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config entry, e.g. --set predictor.epochs=5",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clarify-rank",
        description="Predict user engagement on clarification panes and rank panes per query.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a MIMICS TSV and print corpus stats as JSON")
    p.add_argument("--click", help="MIMICS-Click TSV path")
    p.add_argument("--click-explore", help="MIMICS-ClickExplore TSV path")
    p.add_argument("--lenient", action="store_true", help="skip malformed rows instead of failing")

    p = sub.add_parser("preprocess", help="apply preprocessing and persist the splits as TSV")
    _add_config_args(p)

    p = sub.add_parser("train-predictor", help="run the full engagement-prediction experiment")
    _add_config_args(p)

    p = sub.add_parser("train-ranker", help="run the ranker ablation experiment")
    _add_config_args(p)
    p.add_argument("--predictor-run", required=True, help="predictor run directory (or model.mdl1)")

    p = sub.add_parser("evaluate", help="evaluate a persisted predictor on the test split")
    _add_config_args(p)
    p.add_argument("--model", required=True, help="MDL1 model file")

    p = sub.add_parser("sweep", help="run a grid of config overrides")
    _add_config_args(p)
    p.add_argument("--grid", required=True, help="JSON file mapping dotted config keys to value lists")

    p = sub.add_parser("report", help="re-render report.md from a run's report.json")
    p.add_argument("--run-dir", required=True)

    return parser


def _cmd_ingest(args) -> int:
    if bool(args.click) == bool(args.click_explore):
        print("ingest needs exactly one of --click / --click-explore", file=sys.stderr)
        return 2
    strict = not args.lenient
    if args.click:
        grouped = data_ingest.group_by_query(data_ingest.parse_click(args.click, strict=strict))
    else:
        grouped = data_ingest.parse_click_explore(args.click_explore, strict=strict)
    print(data_ingest.compute_stats(grouped).to_json())
    return 0


def _cmd_preprocess(args) -> int:
    cfg = load_config(args.config, args.overrides)
    cfg.require("click")
    out = Path(cfg.output_dir) / "preprocessed"
    out.mkdir(parents=True, exist_ok=True)

    dataset = data_ingest.parse_click(cfg.data.click)
    pp_cfg = preprocess.PreprocessConfig(
        balance=cfg.preprocess.balance,
        impression_filter=cfg.preprocess.impression_filter,
        reduced_classes=cfg.preprocess.reduced_classes,
        vectorizer=cfg.preprocess.vectorizer,
        seed=derive_seed(cfg.seed, "preprocess"),
    )
    processed = preprocess.apply_preprocess(dataset, pp_cfg)
    splits = preprocess.split_rows(processed, cfg.split, derive_seed(cfg.seed, "split.rows"))
    manifest = {"source": dataset.source, "splits": {}}
    for name, ds in zip(("train", "val", "test"), splits):
        data_ingest.write_click(ds, out / f"{name}.tsv")
        manifest["splits"][name] = {"rows": len(ds), "row_indices": list(ds.row_indices)}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(json.dumps({"output": str(out), "sizes": {k: v["rows"] for k, v in manifest["splits"].items()}}))
    return 0


def _cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    report = json.loads((run_dir / "report.json").read_text())
    (run_dir / "report.md").write_text(render_markdown(report))
    print(str(run_dir / "report.md"))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    if args.command == "ingest":
        return _cmd_ingest(args)
    if args.command == "preprocess":
        return _cmd_preprocess(args)
    if args.command == "train-predictor":
        cfg = load_config(args.config, args.overrides)
        report = run_predict_experiment(cfg)
        print(json.dumps({"output_dir": cfg.output_dir, "metrics": report["metrics"]}))
        return 0
    if args.command == "train-ranker":
        cfg = load_config(args.config, args.overrides)
        report = run_rank_experiment(cfg, args.predictor_run)
        print(
            json.dumps(
                {
                    "output_dir": cfg.output_dir,
                    "with_pue": report["arms"]["with_pue"]["test_ndcg"],
                    "without_pue": report["arms"]["without_pue"]["test_ndcg"],
                }
            )
        )
        return 0
    if args.command == "evaluate":
        cfg = load_config(args.config, args.overrides)
        print(json.dumps(evaluate_saved(cfg, args.model), sort_keys=True))
        return 0
    if args.command == "sweep":
        cfg = load_config(args.config, args.overrides)
        grid = json.loads(Path(args.grid).read_text())
        summary = sweep(cfg, grid)
        print(json.dumps({"best_cell": summary["best_cell"], "cells": len(summary["rows"])}))
        return 0
    if args.command == "report":
        return _cmd_report(args)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    raise SystemExit(main())
