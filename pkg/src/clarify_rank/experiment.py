"""Experiment orchestration: the engagement-prediction run, the ranker
ablation run, and a minimal hyperparameter sweep. Each run writes report.json
(machine-readable, deterministic for a fixed config+seed) and report.md.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import logging
import time
from pathlib import Path

import numpy as np

from . import data_ingest, eval_stats, preprocess, vectorize
from .config import ConfigError, ExperimentConfig, apply_overrides, config_from_dict, derive_seed
from .model_io import load_model_file, model_from_file, save_model
from .predictor import baselines, evaluate_predictor, predict_scalar, train_predictor
from .ranker import evaluate_ranker, train_ranker
from .vectorize import TfidfModel, FIELD_DIM

logger = logging.getLogger(__name__)

BASELINE_P_CUTOFF = 1e-3  # model vs naive baseline
ABLATION_P_CUTOFF = 0.05  # with-PUE vs without-PUE


def _digest(items) -> str:
    h = hashlib.sha256()
    for item in items:
        h.update(str(item).encode())
        h.update(b"\x00")
    return h.hexdigest()[:16]


def _write_failed(out: Path, stage: str, error: Exception) -> None:
    try:
        (out / "FAILED").write_text(
            json.dumps({"stage": stage, "error": str(error)}, sort_keys=True) + "\n"
        )
    except OSError:  # marker writing must never mask the original error
        pass


def _write_report(out: Path, report: dict, markdown: str) -> None:
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    (out / "report.md").write_text(markdown)


def _resolved_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """Fill in everything the master seed determines: per-stage seeds and the
    class count implied by the preprocessing options."""
    pp = dataclasses.replace(cfg.preprocess, seed=derive_seed(cfg.seed, "preprocess"))
    predictor = dataclasses.replace(
        cfg.predictor,
        seed=derive_seed(cfg.seed, "predictor"),
        n_classes=2 if pp.reduced_classes else 11,
    )
    ranker = dataclasses.replace(cfg.ranker, seed=derive_seed(cfg.seed, "ranker"))
    return dataclasses.replace(cfg, preprocess=pp, predictor=predictor, ranker=ranker)


def _prepare_predict_data(cfg: ExperimentConfig, out: Path | None):
    """Shared ingest -> preprocess -> split -> vectorize pipeline for the
    prediction task; expects a resolved config. Returns splits, labels and
    bookkeeping for the report."""
    cfg.require("click")
    dataset = data_ingest.parse_click(cfg.data.click)
    raw_hist = preprocess.label_counts(dataset)

    pp_cfg = cfg.preprocess
    processed = preprocess.apply_preprocess(dataset, pp_cfg)
    n_classes = cfg.predictor.n_classes
    processed_hist = preprocess.label_counts(processed, n_labels=n_classes)

    split_seed = derive_seed(cfg.seed, "split.rows")
    train, val, test = preprocess.split_rows(processed, cfg.split, split_seed)

    if pp_cfg.vectorizer == "tfidf":
        tfidf = vectorize.tfidf_fit(list(train.records))
        if out is not None:
            (out / "tfidf.json").write_text(tfidf.to_json())

        def matrix(ds):
            texts = [vectorize.record_text(r.query, r.question, r.answers) for r in ds.records]
            return vectorize.tfidf_matrix(tfidf, texts)

        vec_info = {"kind": "tfidf", "vocab_size": tfidf.vocab_size, "fit_scope": "train-split"}
    else:
        cfg.require("click_emb1")
        emb = vectorize.load_embeddings(cfg.data.click_emb1)
        max_row = max(dataset.row_indices)
        if emb.n_rows <= max_row:
            raise ConfigError(
                f"embedding file has {emb.n_rows} rows but dataset references row {max_row}"
            )

        def matrix(ds):
            return emb.values[np.array(ds.row_indices, dtype=np.int64)]

        vec_info = {"kind": "embedding", "dim": emb.dim, "n_rows": emb.n_rows}

    task = cfg.predictor.task
    label_dtype = np.float64 if task == "regression" else np.int64
    splits = {}
    for name, ds in (("train", train), ("val", val), ("test", test)):
        splits[name] = (matrix(ds), np.array(ds.labels(), dtype=label_dtype))

    meta = {
        "source": dataset.source,
        "n_parsed": len(dataset),
        "n_rejected": dataset.n_rejected,
        "label_histogram_raw": raw_hist,
        "label_histogram_preprocessed": processed_hist,
        "split_sizes": {name: len(ds) for name, ds in (("train", train), ("val", val), ("test", test))},
        "split_digests": {
            name: _digest(ds.row_indices) for name, ds in (("train", train), ("val", val), ("test", test))
        },
    }
    return splits, vec_info, meta


def run_predict_experiment(cfg: ExperimentConfig) -> dict:
    """Full pipeline: ingest, preprocess, vectorize, train, evaluate against
    baselines with paired t-tests, and write the run report."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "FAILED").unlink(missing_ok=True)
    t0 = time.time()
    stage = "ingest"
    try:
        resolved = _resolved_config(cfg)
        p_cfg = resolved.predictor
        n_classes = p_cfg.n_classes
        splits, vec_info, meta = _prepare_predict_data(resolved, out)

        stage = "train"
        model, history = train_predictor(
            p_cfg, splits["train"], splits["val"], checkpoint_dir=out
        )
        history.to_jsonl(out / "history.jsonl")

        stage = "evaluate"
        result = evaluate_predictor(model, splits["test"], p_cfg.task, n_classes)

        stage = "baselines"
        base = baselines(splits["train"][1], splits["test"][1], p_cfg.task, n_classes)
        tests = {}
        for name, entry in base.entries.items():
            tt = eval_stats.paired_ttest(result.per_sample_losses, entry.per_sample_losses)
            tests[name] = {
                "t": tt.t_statistic,
                "p": tt.p_value,
                "significant": bool(tt.p_value < BASELINE_P_CUTOFF),
            }

        stage = "report"
        if p_cfg.task == "classification":
            cm = eval_stats.confusion(splits["test"][1], result.predicted_classes, n_classes)
            cm.to_csv(out / "confusion.csv")
            confusion_counts = cm.counts.tolist()
        else:
            confusion_counts = None

        save_model(
            model,
            out / "model.mdl1",
            stage="predictor",
            config_hash=resolved.config_hash(),
            metrics={"test_loss": result.loss, "best_val_loss": history.best_val_loss},
            extra={"task": p_cfg.task, "n_classes": n_classes, "vectorizer": vec_info["kind"]},
        )

        report = {
            "experiment": "predict",
            "status": "ok",
            "config": resolved.to_dict(),
            "config_hash": resolved.config_hash(),
            "seeds": {
                "master": cfg.seed,
                "preprocess": resolved.preprocess.seed,
                "split.rows": derive_seed(cfg.seed, "split.rows"),
                "predictor": p_cfg.seed,
            },
            "dataset": meta,
            "vectorizer": vec_info,
            "training": {
                "best_val_loss": history.best_val_loss,
                "best_checkpoint": history.best_checkpoint,
                "eval_points": len(history.entries),
                "rows_dropped_per_epoch": history.skipped_rows,
            },
            "metrics": {"test_loss": result.loss, "accuracy": result.accuracy},
            "baselines": {
                name: {
                    "loss": entry.loss,
                    "accuracy": entry.accuracy,
                    **tests[name],
                }
                for name, entry in base.entries.items()
            },
            "confusion": confusion_counts,
            "notes": {
                "preprocess_order": "impression filter -> zero balance -> class reduction",
                "tfidf_fit_scope": "training split only",
                "baseline_p_cutoff": BASELINE_P_CUTOFF,
                "baseline_pairing": "per-sample test losses",
            },
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "runtime_seconds": round(time.time() - t0, 3),
        }
        _write_report(out, report, render_markdown(report))
        return report
    except Exception as error:
        _write_failed(out, stage, error)
        raise


def evaluate_saved(cfg: ExperimentConfig, model_path: str | Path) -> dict:
    """Standalone evaluation of a persisted predictor on the config's test split."""
    resolved = _resolved_config(cfg)
    n_classes = resolved.predictor.n_classes
    splits, vec_info, meta = _prepare_predict_data(resolved, out=None)
    file = load_model_file(model_path)
    model = model_from_file(file, expect_config_hash=resolved.config_hash())
    task = file.manifest.get("task", cfg.predictor.task)
    result = evaluate_predictor(model, splits["test"], task, n_classes)
    base = baselines(splits["train"][1], splits["test"][1], task, n_classes)
    report = {
        "experiment": "evaluate",
        "model": str(model_path),
        "vectorizer": vec_info,
        "split_digests": meta["split_digests"],
        "metrics": {"test_loss": result.loss, "accuracy": result.accuracy},
        "baselines": {name: {"loss": e.loss, "accuracy": e.accuracy} for name, e in base.entries.items()},
    }
    return report


def _candidate_embedding_rows(emb_values, group: preprocess.CandidateGroup) -> np.ndarray:
    """Dense inputs for one group's candidates on the embedding route.

    Positives use their own row. Negatives keep the host query, so their
    vector is the host row's query slice followed by the foreign row's
    question+answer slices.
    """
    rows = []
    host = emb_values[group.query_row_index]
    for cand in group.candidates:
        if cand.is_negative:
            rows.append(np.concatenate([host[:FIELD_DIM], emb_values[cand.row_index][FIELD_DIM:]]))
        else:
            rows.append(emb_values[cand.row_index])
    return np.stack(rows)


def _predict_pue(
    pred_model,
    vec_kind: str,
    tfidf: TfidfModel | None,
    emb_values,
    groups: list[preprocess.CandidateGroup],
) -> list[np.ndarray]:
    """Predicted engagement for every candidate of every group."""
    pues = []
    for group in groups:
        if vec_kind == "tfidf":
            texts = [
                vectorize.record_text(group.query, c.record.question, c.record.answers)
                for c in group.candidates
            ]
            X = vectorize.tfidf_matrix(tfidf, texts)
        else:
            X = _candidate_embedding_rows(emb_values, group)
        pues.append(predict_scalar(pred_model, X))
    return pues


def run_rank_experiment(cfg: ExperimentConfig, predictor_run: str | Path) -> dict:
    """Ranker ablation: build per-query candidate groups with negatives and
    PUE-derived relevance labels, train the with/without-PUE arms on identical
    splits and seeds, and compare NDCG/MRR with paired t-tests."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "FAILED").unlink(missing_ok=True)
    t0 = time.time()
    stage = "load-predictor"
    try:
        pred_dir = Path(predictor_run)
        model_path = pred_dir / "model.mdl1" if pred_dir.is_dir() else pred_dir
        file = load_model_file(model_path)
        if file.manifest.get("task") != "regression":
            raise ConfigError("the ranker consumes PUE from a trained regression model")
        pred_model = model_from_file(file)
        vec_kind = file.manifest.get("vectorizer", "tfidf")
        tfidf = None
        emb_values = None
        if vec_kind == "tfidf":
            tfidf = TfidfModel.from_json((model_path.parent / "tfidf.json").read_text())
        else:
            cfg.require("click_explore_emb1")
            emb_values = vectorize.load_embeddings(cfg.data.click_explore_emb1).values

        stage = "ingest"
        cfg.require("click_explore")
        grouped = data_ingest.parse_click_explore(cfg.data.click_explore)
        corpus_stats = data_ingest.compute_stats(grouped)

        stage = "split"
        q_seed = derive_seed(cfg.seed, "split.queries")
        split_map = dict(zip(("train", "val", "test"), preprocess.split_queries(grouped, cfg.split, q_seed)))

        stage = "negatives"
        candidate_groups = {
            name: preprocess.add_negatives(
                g, k=cfg.negatives_per_group, seed=derive_seed(cfg.seed, f"negatives.{name}")
            )
            for name, g in split_map.items()
        }

        stage = "pue"
        rank_groups = {}
        for name, groups in candidate_groups.items():
            pues = _predict_pue(pred_model, vec_kind, tfidf, emb_values, groups)
            rank_groups[name] = [
                preprocess.assign_relevance(g, p.tolist()) for g, p in zip(groups, pues)
            ]

        stage = "features"
        stats = vectorize.fit_feature_stats(rank_groups["train"])
        resolved = _resolved_config(cfg)
        ranker_seed = resolved.ranker.seed

        stage = "train"
        arms = {}
        per_query = {}
        for arm, with_pue in (("with_pue", True), ("without_pue", False)):
            r_cfg = dataclasses.replace(resolved.ranker, with_pue=with_pue)
            feature_groups = {
                name: vectorize.build_feature_groups(groups, stats, with_pue)
                for name, groups in rank_groups.items()
            }
            model, history = train_ranker(
                r_cfg, feature_groups["train"], feature_groups["val"]
            )
            ndcgs, mrrs = evaluate_ranker(model, feature_groups["test"])
            per_query[arm] = (ndcgs, mrrs)
            save_model(
                model,
                out / f"ranker_{arm}.mdl1",
                stage="ranker",
                config_hash=resolved.config_hash(),
                metrics={"test_ndcg": float(ndcgs.mean()), "test_mrr": float(mrrs.mean())},
                extra={"with_pue": with_pue},
            )
            arms[arm] = {
                "test_ndcg": float(ndcgs.mean()),
                "test_mrr": float(mrrs.mean()),
                "skipped_degenerate_groups": history.skipped_degenerate_groups,
                "per_epoch": [
                    {
                        "epoch": e.epoch,
                        "mean_pair_cost": e.mean_cost,
                        "val_ndcg": e.val_ndcg,
                        "val_mrr": e.val_mrr,
                    }
                    for e in history.per_epoch
                ],
                "split_digest": {
                    name: _digest(g.query for g in groups) for name, groups in rank_groups.items()
                },
            }

        stage = "significance"
        ndcg_test = eval_stats.paired_ttest(per_query["with_pue"][0], per_query["without_pue"][0])
        mrr_test = eval_stats.paired_ttest(per_query["with_pue"][1], per_query["without_pue"][1])

        stage = "report"
        report = {
            "experiment": "rank",
            "status": "ok",
            "config": resolved.to_dict(),
            "config_hash": resolved.config_hash(),
            "seeds": {
                "master": cfg.seed,
                "split.queries": q_seed,
                "negatives": {
                    name: derive_seed(cfg.seed, f"negatives.{name}") for name in split_map
                },
                "ranker": ranker_seed,
            },
            "predictor_model": str(model_path),
            "dataset": {
                "source": grouped.source,
                "n_queries": corpus_stats.n_queries,
                "n_pairs": corpus_stats.n_pairs,
                "mean_cps_per_query": corpus_stats.mean_cps_per_query,
                "split_group_counts": {name: len(g) for name, g in split_map.items()},
                "negatives_per_group": cfg.negatives_per_group,
            },
            "arms": arms,
            "arms_share_splits": bool(
                arms["with_pue"]["split_digest"] == arms["without_pue"]["split_digest"]
            ),
            "tests": {
                "ndcg": {
                    "t": ndcg_test.t_statistic,
                    "p": ndcg_test.p_value,
                    "n_queries": ndcg_test.n,
                    "significant": bool(ndcg_test.p_value < ABLATION_P_CUTOFF),
                },
                "mrr": {
                    "t": mrr_test.t_statistic,
                    "p": mrr_test.p_value,
                    "n_queries": mrr_test.n,
                    "significant": bool(mrr_test.p_value < ABLATION_P_CUTOFF),
                },
            },
            "notes": {
                "ablation_p_cutoff": ABLATION_P_CUTOFF,
                "ablation_pairing": "per-query NDCG/MRR",
                "pue_standardized_with_other_features": True,
                "negatives_sampled_within_split": True,
            },
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "runtime_seconds": round(time.time() - t0, 3),
        }
        _write_report(out, report, render_markdown(report))
        return report
    except Exception as error:
        _write_failed(out, stage, error)
        raise


def sweep(cfg: ExperimentConfig, grid: dict[str, list]) -> dict:
    """Cartesian-product sweep of config overrides over the predict pipeline.

    Individual cell failures are recorded and the sweep continues; the best
    row minimizes validation loss.
    """
    if not grid:
        raise ConfigError("sweep grid must be non-empty")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    keys = sorted(grid)
    rows = []
    for i, values in enumerate(itertools.product(*(grid[k] for k in keys))):
        overrides = dict(zip(keys, values))
        raw = cfg.to_dict()
        apply_overrides(raw, [f"{k}={json.dumps(v)}" for k, v in overrides.items()])
        raw["output_dir"] = str(out / f"cell_{i:03d}")
        try:
            report = run_predict_experiment(config_from_dict(raw))
            rows.append(
                {
                    "cell": i,
                    "overrides": overrides,
                    "status": "ok",
                    "val_loss": report["training"]["best_val_loss"],
                    "test_loss": report["metrics"]["test_loss"],
                }
            )
        except Exception as error:  # keep sweeping; the cell dir holds a FAILED marker
            logger.warning("sweep cell %d failed: %s", i, error)
            rows.append({"cell": i, "overrides": overrides, "status": "failed", "error": str(error)})

    ok_rows = [r for r in rows if r["status"] == "ok"]
    best = min(ok_rows, key=lambda r: r["val_loss"]) if ok_rows else None
    summary = {
        "experiment": "sweep",
        "grid": grid,
        "rows": rows,
        "best_cell": None if best is None else best["cell"],
    }
    (out / "sweep.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    (out / "sweep.md").write_text(_render_sweep_md(summary))
    return summary


def render_markdown(report: dict) -> str:
    kind = report.get("experiment")
    if kind == "predict":
        return _render_predict_md(report)
    if kind == "rank":
        return _render_rank_md(report)
    if kind == "sweep":
        return _render_sweep_md(report)
    raise ValueError(f"cannot render report of kind {kind!r}")


def _fmt(value, digits=4) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def _render_predict_md(r: dict) -> str:
    task = r["config"]["predictor"]["task"]
    loss_name = "MSE" if task == "regression" else "CE"
    lines = [
        "# Engagement prediction report",
        "",
        f"- data: `{r['dataset']['source']}` ({r['dataset']['n_parsed']} rows parsed)",
        f"- task: {task} ({loss_name} loss), vectorizer: {r['vectorizer']['kind']}",
        f"- split sizes: {r['dataset']['split_sizes']}",
        f"- best validation loss {_fmt(r['training']['best_val_loss'])} "
        f"at batch {r['training']['best_checkpoint']}",
        "",
        "## Test results",
        "",
        f"| model / baseline | {loss_name} loss | accuracy | p vs model | significant (p<{r['notes']['baseline_p_cutoff']}) |",
        "|---|---|---|---|---|",
        f"| model | {_fmt(r['metrics']['test_loss'])} | {_fmt(r['metrics']['accuracy'])} | - | - |",
    ]
    for name, entry in sorted(r["baselines"].items()):
        star = "*" if entry["significant"] else ""
        lines.append(
            f"| {name} | {_fmt(entry['loss'])} | {_fmt(entry['accuracy'])} "
            f"| {_fmt(entry['p'], 6)} | {star} |"
        )
    lines += [
        "",
        "## Preprocessing",
        "",
        f"- order: {r['notes']['preprocess_order']}",
        f"- label histogram raw: {r['dataset']['label_histogram_raw']}",
        f"- label histogram preprocessed: {r['dataset']['label_histogram_preprocessed']}",
        "",
        "## Reproducibility",
        "",
        f"- config hash: `{r['config_hash']}`",
        f"- seeds: {json.dumps(r['seeds'], sort_keys=True)}",
        f"- split digests: {json.dumps(r['dataset']['split_digests'], sort_keys=True)}",
        "",
    ]
    return "\n".join(lines)


def _render_rank_md(r: dict) -> str:
    lines = [
        "# Ranker ablation report",
        "",
        f"- data: `{r['dataset']['source']}` "
        f"({r['dataset']['n_queries']} queries, {r['dataset']['n_pairs']} pairs)",
        f"- predictor model: `{r['predictor_model']}`",
        f"- negatives per group: {r['dataset']['negatives_per_group']}",
        f"- arms share splits: {r['arms_share_splits']}",
        "",
        "## Test results",
        "",
        "| model | NDCG | MRR |",
        "|---|---|---|",
    ]
    for arm in ("with_pue", "without_pue"):
        a = r["arms"][arm]
        lines.append(f"| {arm.replace('_', ' ')} | {_fmt(a['test_ndcg'])} | {_fmt(a['test_mrr'])} |")
    lines += [
        "",
        "## Significance (paired two-sided t-test, per-query)",
        "",
        "| metric | t | p | significant (p<0.05) |",
        "|---|---|---|---|",
    ]
    for metric in ("ndcg", "mrr"):
        t = r["tests"][metric]
        star = "*" if t["significant"] else ""
        lines.append(f"| {metric.upper()} | {_fmt(t['t'])} | {_fmt(t['p'], 6)} | {star} |")
    lines += [
        "",
        "## Reproducibility",
        "",
        f"- config hash: `{r['config_hash']}`",
        f"- seeds: {json.dumps(r['seeds'], sort_keys=True)}",
        "",
    ]
    return "\n".join(lines)


def _render_sweep_md(r: dict) -> str:
    lines = [
        "# Sweep summary",
        "",
        f"- grid: {json.dumps(r['grid'], sort_keys=True)}",
        f"- best cell: {r['best_cell']}",
        "",
        "| cell | overrides | status | val loss | test loss |",
        "|---|---|---|---|---|",
    ]
    for row in r["rows"]:
        best = " (best)" if row["cell"] == r["best_cell"] else ""
        lines.append(
            f"| {row['cell']}{best} | {json.dumps(row['overrides'], sort_keys=True)} "
            f"| {row['status']} | {_fmt(row.get('val_loss'))} | {_fmt(row.get('test_loss'))} |"
        )
    lines.append("")
    return "\n".join(lines)
