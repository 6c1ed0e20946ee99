"""Operator surface: train, recommend, simulate, report.

Configuration comes from an optional JSON file (--config) with flag
overrides; flags win. Relative input paths are resolved against
$PEERMUSE_DATA_DIR when it is set. Every referenced input file is checked
before any work starts, and all outputs are deterministic for a fixed
seed and configuration.
"""

import argparse
import json
import os
import sys

from .errors import PeermuseError
from .features import FeatureAssembler, write_feature_matrix
from .graph import read_edge_log
from .metrics import read_idea_log
from .model import (
    FAST_GRID,
    FULL_GRID,
    TrainSettings,
    TreeEnsemble,
    build_dataset,
    train_model,
)
from .recommender import recommend, write_recommendation_log
from .reporting import CV_REPORT_CSV, MODEL_JSON, write_cv_report, write_report
from .semantics import EmbeddingTable, Taxonomy
from .sim import StudyConfig, run_study
from .state import states_from_logs

DATA_DIR_ENV = "PEERMUSE_DATA_DIR"

INPUT_KEYS = (
    "ideas",
    "edges",
    "participants",
    "embeddings_a",
    "embeddings_b",
    "taxonomy_edges",
    "taxonomy_lexicon",
    "model",
)


def _resolve(path):
    base = os.environ.get(DATA_DIR_ENV)
    if base and path and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _load_config(path):
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _gather_paths(args, config):
    """Merge config-file paths with flag overrides; flags win."""
    paths = dict(config.get("paths", {}))
    for key in INPUT_KEYS:
        flag = getattr(args, key, None)
        if flag:
            paths[key] = flag
    return {k: _resolve(v) for k, v in paths.items() if v}


def _require(paths, keys):
    for key in keys:
        if key not in paths:
            raise PeermuseError(f"missing required input path: --{key.replace('_', '-')}")
        if not os.path.exists(paths[key]):
            raise PeermuseError(f"input file not found: {paths[key]}")


def _load_participants(path):
    genders = {}
    if not path:
        return genders
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            genders[rec["participant_id"]] = rec.get("gender", "unknown")
    return genders


def _load_resources(paths):
    taxonomy = Taxonomy.load(paths["taxonomy_edges"], paths.get("taxonomy_lexicon"))
    table_a = EmbeddingTable.load(paths["embeddings_a"], "table-a")
    table_b = EmbeddingTable.load(paths["embeddings_b"], "table-b")
    return taxonomy, table_a, table_b


def cmd_train(args):
    config = _load_config(args.config)
    paths = _gather_paths(args, config)
    _require(paths, ("ideas", "edges", "embeddings_a", "embeddings_b", "taxonomy_edges"))
    out_dir = args.out or config.get("out") or "train-out"
    os.makedirs(out_dir, exist_ok=True)

    taxonomy, table_a, table_b = _load_resources(paths)
    genders = _load_participants(paths.get("participants"))
    ideas = read_idea_log(paths["ideas"])
    edges = read_edge_log(paths["edges"])
    states = states_from_logs(ideas, edges, genders=genders, taxonomy=taxonomy)
    assembler = FeatureAssembler(taxonomy, table_a, table_b)
    dataset = build_dataset(states, assembler)

    train_cfg = dict(config.get("train", {}))
    if args.grid:
        train_cfg["grid"] = args.grid
    grid = train_cfg.pop("grid", "fast")
    if grid == "fast":
        grid = FAST_GRID
    elif grid == "full":
        grid = FULL_GRID
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    settings = TrainSettings(seed=seed, grid=grid, **train_cfg)
    ensemble, report = train_model(dataset, settings)

    ensemble.save(os.path.join(out_dir, MODEL_JSON))
    write_cv_report(os.path.join(out_dir, CV_REPORT_CSV), report["cv_table"])
    write_feature_matrix(os.path.join(out_dir, "features.csv"), dataset.features)
    print(f"rows: {len(dataset)}  egos: {len(dataset.unique_egos())}")
    print(f"test R2: {report['test_r2']:.4f}  test MAE: {report['test_mae']:.4f}")
    print(f"model: {os.path.join(out_dir, MODEL_JSON)}")
    return 0


def _pending_contexts(state, max_round):
    """(ego, round) pairs whose features are ready but edges are not."""
    pending = []
    for ego in state.arrival_order:
        for t in range(2, max_round + 2):
            if state.has_edges(ego, t):
                continue
            if state.idea_set(ego, t - 1, 1).tokens or state.idea_set(ego, t - 1, 2).tokens:
                pending.append((ego, t))
    return pending


def cmd_recommend(args):
    config = _load_config(args.config)
    paths = _gather_paths(args, config)
    _require(
        paths,
        ("model", "ideas", "edges", "embeddings_a", "embeddings_b", "taxonomy_edges"),
    )
    out_dir = args.out or config.get("out") or "."
    os.makedirs(out_dir, exist_ok=True)

    ensemble = TreeEnsemble.load(paths["model"])
    taxonomy, table_a, table_b = _load_resources(paths)
    genders = _load_participants(paths.get("participants"))
    ideas = read_idea_log(paths["ideas"])
    edges = read_edge_log(paths["edges"])
    states = states_from_logs(ideas, edges, genders=genders, taxonomy=taxonomy)
    assembler = FeatureAssembler(taxonomy, table_a, table_b)

    recommendations = []
    for state in states:
        max_round = max(state.rounds_with_edges(), default=1)
        for ego, t in _pending_contexts(state, max_round):
            recommendations.append(recommend(state, ego, t, ensemble, assembler))
    out_path = os.path.join(out_dir, "recommendations.jsonl")
    write_recommendation_log(out_path, recommendations)
    print(f"pending contexts scored: {len(recommendations)}")
    print(f"log: {out_path}")
    return 0


def cmd_simulate(args):
    config = _load_config(args.config)
    study_cfg = dict(config.get("study", {}))
    base = dict(study_cfg.get("base", {}))
    if args.seed is not None:
        base["seed"] = args.seed
    if args.rounds is not None:
        base["rounds"] = args.rounds
    if args.adherence is not None:
        base["adherence"] = args.adherence
    study_cfg["base"] = base
    if args.trials is not None:
        study_cfg["n_trials"] = args.trials
    if args.bootstrap_trials is not None:
        study_cfg["bootstrap_trials"] = args.bootstrap_trials
    study = StudyConfig.from_dict(study_cfg)
    out_dir = args.out or config.get("out") or "run-out"
    result = run_study(study, out_dir)
    s = result.summary
    print(
        f"trials: {s['n_trials']}  "
        f"marginal wins (treatment): {s['marginal_wins_treatment']}  "
        f"gini wins (treatment): {s['gini_wins_treatment']}"
    )
    print(f"run dir: {out_dir}")
    return 0


def cmd_report(args):
    run_dir = _resolve(args.run)
    if not os.path.isdir(run_dir):
        raise PeermuseError(f"run directory not found: {run_dir}")
    out = write_report(run_dir, args.out, figures=not args.no_figures)
    names = sorted(os.listdir(out))
    print(f"report dir: {out}")
    for name in names:
        print(f"  {name}")
    return 0


def _add_common(parser):
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("--out", help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="peermuse",
        description="peer recommendations, creativity metrics and the experiment simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit the performance-score model from logs")
    _add_common(p_train)
    for key in INPUT_KEYS:
        if key != "model":
            p_train.add_argument(f"--{key.replace('_', '-')}", dest=key)
    p_train.add_argument("--grid", choices=["fast", "full"], help="hyperparameter grid preset")
    p_train.set_defaults(func=cmd_train)

    p_rec = sub.add_parser("recommend", help="batch-score pending (ego, round) contexts")
    _add_common(p_rec)
    for key in INPUT_KEYS:
        p_rec.add_argument(f"--{key.replace('_', '-')}", dest=key)
    p_rec.set_defaults(func=cmd_recommend)

    p_sim = sub.add_parser("simulate", help="run the paired-condition study end to end")
    _add_common(p_sim)
    p_sim.add_argument("--trials", type=int)
    p_sim.add_argument("--rounds", type=int)
    p_sim.add_argument("--adherence", type=float)
    p_sim.add_argument("--bootstrap-trials", type=int, dest="bootstrap_trials")
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("report", help="summary tables and figures for a run directory")
    _add_common(p_rep)
    p_rep.add_argument("--run", required=True, help="run directory produced by simulate")
    p_rep.add_argument("--no-figures", action="store_true")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PeermuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
