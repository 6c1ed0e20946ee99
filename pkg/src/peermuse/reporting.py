"""Run-directory layout and the report generator.

A run directory holds plain-text artifacts only: JSONL logs (ideas, edges,
recommendations, ratings), CSV metric tables, a summary and a manifest.
``write_report`` derives the figure-style tables (condition comparisons,
Gini-versus-size series, dominance profile) from those files and renders
matplotlib figures next to them. Everything is deterministic; no
timestamps are written anywhere.
"""

import csv
import json
import os

import numpy as np

from . import __version__
from .errors import InvalidInputError
from .graph import write_edge_log
from .metrics import write_idea_log, write_metric_report
from .recommender import write_dominance_csv, write_recommendation_log

METRICS_CSV = "metrics.csv"
GINI_CSV = "gini.csv"
COLLECTIVE_CSV = "collective.csv"
DOMINANCE_CSV = "dominance.csv"
SUMMARY_JSON = "summary.json"
MANIFEST_JSON = "manifest.json"
MODEL_JSON = "model.json"
CV_REPORT_CSV = "cv_report.csv"

COMPARISON_METRICS = ("marginal_distinct", "nonredundant", "cq", "best_novelty")


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def write_cv_report(path, cv_table):
    header = [
        "n_estimators", "learning_rate", "max_depth", "subsample",
        "colsample_bytree", "max_leaves", "mean_cv_r2",
    ]
    rows = [[_fmt(row[k]) for k in header] for row in cv_table]
    _write_csv(path, header, rows)


def write_run_dir(out_dir, study, result, ensemble=None, train_report=None):
    """Materialize an experiment result as a run directory."""
    from .sim import config_hash  # local import to avoid a cycle

    os.makedirs(out_dir, exist_ok=True)
    join = lambda name: os.path.join(out_dir, name)

    write_metric_report(join(METRICS_CSV), result.metrics)
    _write_csv(
        join(GINI_CSV),
        ["trial", "condition", "round", "network_size", "gini"],
        [
            [r["trial"], r["condition"], r["round"], r["network_size"], _fmt(r["gini"])]
            for r in result.ginis
        ],
    )
    _write_csv(
        join(COLLECTIVE_CSV),
        ["trial", "condition", "round", "collective_distinct"],
        [
            [r["trial"], r["condition"], r["round"], r["collective_distinct"]]
            for r in result.collectives
        ],
    )
    write_idea_log(join("ideas.jsonl"), result.ideas)
    write_edge_log(join("edges.jsonl"), result.edges)
    with open(join("ratings.jsonl"), "w", encoding="utf-8") as fh:
        for rec in result.ratings:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if result.recommendations:
        write_recommendation_log(join("recommendations.jsonl"), result.recommendations)
        write_dominance_csv(join(DOMINANCE_CSV), result.dominance)
    with open(join(SUMMARY_JSON), "w", encoding="utf-8") as fh:
        json.dump(result.summary, fh, sort_keys=True, indent=1)
        fh.write("\n")
    if ensemble is not None:
        ensemble.save(join(MODEL_JSON))
    if train_report is not None:
        write_cv_report(join(CV_REPORT_CSV), train_report["cv_table"])
    manifest = {
        "version": __version__,
        "seed": study.base.seed,
        "config": study.to_dict(),
        "config_hash": config_hash(study),
        "model_trained": ensemble is not None,
    }
    with open(join(MANIFEST_JSON), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return out_dir


def read_metrics_csv(path):
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "trial": row["trial"],
                    "condition": row["condition"],
                    "ego": row["ego"],
                    "round": int(row["round"]),
                    "marginal_distinct": float(row["marginal_distinct"]),
                    "nonredundant": float(row["nonredundant"]),
                    "cq": float(row["cq"]),
                    "best_novelty": float(row["best_novelty"]),
                }
            )
    return rows


def read_gini_csv(path):
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "trial": row["trial"],
                    "condition": row["condition"],
                    "round": int(row["round"]),
                    "network_size": int(row["network_size"]),
                    "gini": float(row["gini"]),
                }
            )
    return rows


def _mean_ci(values):
    """Mean with a normal-approximation 95% interval."""
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    if len(arr) < 2:
        return mean, mean, mean
    half = 1.96 * float(arr.std(ddof=1)) / np.sqrt(len(arr))
    return mean, mean - half, mean + half


def comparison_rows(metric_rows):
    """Per-metric, per-round condition means with 95% CI."""
    out = []
    conditions = sorted({r["condition"] for r in metric_rows})
    rounds = sorted({r["round"] for r in metric_rows})
    for metric in COMPARISON_METRICS:
        for round_t in rounds:
            for condition in conditions:
                values = [
                    r[metric]
                    for r in metric_rows
                    if r["round"] == round_t and r["condition"] == condition
                ]
                if not values:
                    continue
                mean, lo, hi = _mean_ci(values)
                out.append(
                    {
                        "metric": metric,
                        "round": round_t,
                        "condition": condition,
                        "n": len(values),
                        "mean": mean,
                        "ci_low": lo,
                        "ci_high": hi,
                    }
                )
    return out


def gini_by_size_rows(gini_rows):
    """Condition means of Gini per network size, pooled over rounds/trials."""
    out = []
    conditions = sorted({r["condition"] for r in gini_rows})
    sizes = sorted({r["network_size"] for r in gini_rows})
    for size in sizes:
        for condition in conditions:
            values = [
                r["gini"]
                for r in gini_rows
                if r["network_size"] == size and r["condition"] == condition
            ]
            if not values:
                continue
            mean, lo, hi = _mean_ci(values)
            out.append(
                {
                    "network_size": size,
                    "condition": condition,
                    "n": len(values),
                    "mean": mean,
                    "ci_low": lo,
                    "ci_high": hi,
                }
            )
    return out


def write_report(run_dir, out_dir=None, figures=True):
    """Summary tables (CSV) and figures derived from a run directory."""
    metrics_path = os.path.join(run_dir, METRICS_CSV)
    if not os.path.exists(metrics_path):
        raise InvalidInputError(f"not a run directory (no {METRICS_CSV}): {run_dir}")
    out_dir = out_dir or os.path.join(run_dir, "report")
    os.makedirs(out_dir, exist_ok=True)

    metric_rows = read_metrics_csv(metrics_path)
    comparisons = comparison_rows(metric_rows)
    _write_csv(
        os.path.join(out_dir, "metric_comparisons.csv"),
        ["metric", "round", "condition", "n", "mean", "ci_low", "ci_high"],
        [
            [r["metric"], r["round"], r["condition"], r["n"],
             _fmt(r["mean"]), _fmt(r["ci_low"]), _fmt(r["ci_high"])]
            for r in comparisons
        ],
    )

    gini_path = os.path.join(run_dir, GINI_CSV)
    gini_series = []
    if os.path.exists(gini_path):
        gini_series = gini_by_size_rows(read_gini_csv(gini_path))
        _write_csv(
            os.path.join(out_dir, "gini_by_size.csv"),
            ["network_size", "condition", "n", "mean", "ci_low", "ci_high"],
            [
                [r["network_size"], r["condition"], r["n"],
                 _fmt(r["mean"]), _fmt(r["ci_low"]), _fmt(r["ci_high"])]
                for r in gini_series
            ],
        )

    dominance_path = os.path.join(run_dir, DOMINANCE_CSV)
    dominance = []
    if os.path.exists(dominance_path):
        with open(dominance_path, encoding="utf-8", newline="") as fh:
            dominance = [
                {
                    "round": int(r["round"]),
                    "network_size": int(r["network_size"]),
                    "n_decisions": int(r["n_decisions"]),
                    "fraction_semantic": float(r["fraction_semantic"]),
                }
                for r in csv.DictReader(fh)
            ]
        _write_csv(
            os.path.join(out_dir, "dominance_profile.csv"),
            ["round", "network_size", "n_decisions", "fraction_semantic"],
            [
                [r["round"], r["network_size"], r["n_decisions"], _fmt(r["fraction_semantic"])]
                for r in dominance
            ],
        )

    notes = {
        "run_dir": os.path.abspath(run_dir),
        "dominance_available": bool(dominance),
        "tables": sorted(
            name for name in os.listdir(out_dir) if name.endswith(".csv")
        ),
    }
    if not dominance:
        notes["note"] = "no recommendation log found (control-only run); dominance profile omitted"

    if figures:
        from . import plots

        figure_paths = plots.render_report_figures(
            out_dir, comparisons, gini_series, dominance
        )
        notes["figures"] = [os.path.basename(p) for p in figure_paths]

    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(notes, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return out_dir
