"""Acceptance gate: every criterion at its stated tolerance, one printed
pass/fail line per criterion (run with ``pytest tests/test_acceptance.py -v -s``).
"""

import hashlib
import itertools
import json
import math
import time
from itertools import combinations

import numpy as np
import pytest

from peermuse import semantics as S
from peermuse.cli import main as cli_main
from peermuse.features import FEATURE_NAMES
from peermuse.graph import gini_coefficient
from peermuse.model import (
    TrainingSet,
    fit_gbt,
    fit_ridge,
    grouped_split,
    r2_score,
    rfe_by_shap,
    tree_shap,
)
from peermuse.recommender import dominance_profile, recommend
from peermuse.sim import StudyConfig, initial_pair, run_study, run_trial
from conftest import PLANTED_SIGNAL, planted_dataset

from test_model import brute_force_phi
from test_semantics import enumerate_spanning_tree_max


def report(num, ok, detail):
    print(f"[criterion {num:2d}] {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num}: {detail}"


def gini_pair_oracle(counts):
    total = float(sum(counts))
    if total == 0:
        return 0.0
    m = [c / total for c in counts]
    return sum(abs(a - b) for a in m for b in m) / (2 * len(m) * sum(m))


def test_c01_gini_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(1000):
        counts = rng.integers(0, 50, size=int(rng.integers(1, 10)))
        if counts.sum() == 0:
            counts[0] = 1
        worst = max(
            worst, abs(gini_coefficient(list(counts)) - gini_pair_oracle(list(counts)))
        )
    ids = tuple(f"a{i}" for i in range(1, 7))
    counts = {a: 0 for a in ids}
    for rank in range(18):
        for a in initial_pair(rank, ids):
            counts[a] += 1
    initial = gini_coefficient([counts[a] for a in ids])
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and initial == 0.0 and elapsed < 1.0
    report(1, ok, f"oracle dev {worst:.2e}, initial topology G={initial}, {elapsed:.2f}s")


def test_c02_quotient_spanning_tree_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 7))
        w = rng.random((n, n))
        w = (w + w.T) / 2
        np.fill_diagonal(w, 0.0)
        total, edges = S.maximum_spanning_tree(w)
        worst = max(worst, abs(total - enumerate_spanning_tree_max(w)))
        assert len(edges) == max(0, n - 1)
    # the quotient identity holds exactly on taxonomy-backed scores
    tax = S.Taxonomy({"a": set(), "b": {"a"}, "c": {"a"}, "d": {"b"}})
    identity_ok = True
    for k in range(1, 5):
        for concepts in itertools.combinations(("a", "b", "c", "d"), k):
            score = S.creativity_quotient(tax, concepts)
            identity_ok &= score.quotient == score.n_concepts - score.multi_information
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and identity_ok and elapsed < 10.0
    report(2, ok, f"tree-enumeration dev {worst:.2e}, Q=N-Im exact={identity_ok}, {elapsed:.1f}s")


def test_c03_information_content_and_similarity_fixtures():
    # information content: leaf, root, and the h=2/w=100 point
    chain = S.Taxonomy({"a": set(), "b": {"a"}, "c": {"a"}})
    checks = [
        ("leaf I=1", abs(S.information_content(chain, "b") - 1.0)),
        ("root I=0", abs(S.information_content(chain, S.VIRTUAL_ROOT) - 0.0)),
    ]
    links = {"top": set(), "mid": {"top"}, "x1": {"mid"}, "x2": {"mid"}}
    for i in range(95):
        links[f"leaf{i:02d}"] = {"top"}
    tax100 = S.Taxonomy(links)
    expected = 1.0 - math.log(3) / math.log(100)
    checks.append(("h=2,w=100", abs(S.information_content(tax100, "mid") - expected)))
    # pair similarity: identity, boundary, direct formula point
    two = S.Taxonomy({"a": set(), "b": set()})
    checks.append(("identity sim", abs(S.pair_similarity(chain, "b", "b") - 1.0)))
    checks.append(("boundary sim", abs(S.pair_similarity(two, "a", "b") - 0.0)))
    checks.append(("formula 0.8", abs(S.overlap_similarity(0.8, 0.6, 0.5) - 0.8)))
    worst = max(v for _, v in checks)
    ok = worst <= 1e-9
    report(3, ok, f"six fixtures, worst dev {worst:.2e}")


def test_c04_tree_shapley():
    start = time.perf_counter()
    ds = planted_dataset(104, n_rows=600)
    train, _ = grouped_split(ds, 0.2, seed=0)
    ens = fit_gbt(
        train,
        {"n_estimators": 60, "max_depth": 3, "learning_rate": 0.1, "max_leaves": 8},
        seed=0,
    )
    rng = np.random.default_rng(104)
    x = rng.normal(size=(1000, 36))
    worst_local = 0.0
    for row in x:
        att = tree_shap(ens, row)
        worst_local = max(worst_local, abs(att.prediction - ens.predict_raw(row)))

    x4 = rng.normal(size=(120, 4))
    y4 = 1.5 * x4[:, 0] - np.cos(2 * x4[:, 2]) + 0.1 * rng.normal(size=120)
    small = fit_gbt(
        TrainingSet.from_arrays(x4, y4),
        {"n_estimators": 12, "max_depth": 2, "learning_rate": 0.3, "max_leaves": 4},
        seed=0,
    )
    worst_bf = 0.0
    for i in range(10):
        att = tree_shap(small, x4[i])
        worst_bf = max(worst_bf, np.abs(att.values - brute_force_phi(small, x4[i], 4)).max())
    elapsed = time.perf_counter() - start
    ok = worst_local < 1e-6 and worst_bf <= 1e-9 and elapsed < 30.0
    report(4, ok, f"local acc {worst_local:.2e}, coalition oracle {worst_bf:.2e}, {elapsed:.1f}s")


def test_c05_recommender_argmax(sim_world):
    ens = sim_world["ensemble"]
    asm = sim_world["assembler"]
    study = sim_world["study"]
    rng = np.random.default_rng(105)
    contexts = []
    states = []
    for trial in ("seed-00", "seed-01", "seed-02", "seed-03"):
        cfg = study.base.with_(trial=trial, condition="control")
        states.append(run_trial(cfg, universe=sim_world["universe"], assembler=asm).state)
    for state in states:
        for ego in state.arrival_order:
            for t in (2, 3, 4):
                contexts.append((state, ego, t))
    assert len(contexts) >= 100
    picks = rng.permutation(len(contexts))[:100]
    agree = 0
    counts_ok = True
    for k in picks:
        state, ego, t = contexts[int(k)]
        rec = recommend(state, ego, t, ens, asm)
        counts_ok &= len(rec.candidates) == 15 and len({c.pair for c in rec.candidates}) == 15
        best = max(
            (
                (float(ens.predict_raw(asm.assemble(state, ego, t, pair,
                                                    feature_means=ens.feature_means))), pair)
                for pair in combinations(state.alter_ids, 2)
            ),
            key=lambda sp: sp[0],
        )
        agree += rec.chosen_pair == best[1]
    constant = fit_gbt(
        TrainingSet.from_arrays(np.zeros((12, 36)), np.full(12, 1.0),
                                feature_names=FEATURE_NAMES),
        {"n_estimators": 2},
        seed=0,
    )
    state = states[0]
    tie_rec = recommend(state, state.arrival_order[0], 2, constant, asm)
    tie_ok = tie_rec.chosen_pair == tuple(sorted(state.alter_ids)[:2])
    ok = agree == 100 and counts_ok and tie_ok
    report(5, ok, f"argmax agreement {agree}/100, 15 candidates={counts_ok}, tie rule={tie_ok}")


def test_c06_grouped_split():
    ds = planted_dataset(106)  # 360 egos, 1440 rows
    train, test = grouped_split(ds, 0.2, seed=106)
    n_train = len(set(train.ego_ids))
    n_test = len(set(test.ego_ids))
    overlap = set(train.ego_ids) & set(test.ego_ids)
    ratio_ok = abs(n_test - 72) <= 1 and n_train + n_test == 360
    ok = not overlap and ratio_ok
    report(6, ok, f"split {n_train}/{n_test} egos, overlap={len(overlap)}")


def test_c07_learner_sanity():
    start = time.perf_counter()
    params = {"n_estimators": 150, "learning_rate": 0.1, "max_depth": 3, "max_leaves": 8}
    rfe_params = {"n_estimators": 20, "learning_rate": 0.25, "subsample": 0.6,
                  "max_leaves": 6}
    r2s, ridge_wins, rfe_clean = [], 0, 0
    for seed in range(10):
        ds = planted_dataset(seed)
        train, test = grouped_split(ds, 0.2, seed=seed)
        ens = fit_gbt(train, params, seed=seed)
        r2 = r2_score(test.targets, ens.predict_raw(test.features))
        r2s.append(r2)
        ridge = fit_ridge(train.features, train.targets)
        ridge_wins += r2 > r2_score(test.targets, ridge.predict(test.features))
        res = rfe_by_shap(ds, params=rfe_params, folds=2, seed=seed)
        signal = {ds.feature_names[i] for i in PLANTED_SIGNAL}
        rfe_clean += not (signal & set(res.eliminated))
    elapsed = time.perf_counter() - start
    ok = min(r2s) >= 0.6 and ridge_wins >= 8 and rfe_clean >= 9 and elapsed < 180.0
    report(
        7,
        ok,
        f"min R2 {min(r2s):.3f}, boosted>ridge {ridge_wins}/10, "
        f"noise-first RFE {rfe_clean}/10, {elapsed:.0f}s",
    )


def test_c08_end_to_end_directional_analogue(tmp_path):
    start = time.perf_counter()
    result = run_study(StudyConfig(), tmp_path / "run")
    summary = result.summary
    elapsed = time.perf_counter() - start
    ok = (
        summary["marginal_wins_treatment"] >= 7
        and summary["gini_wins_treatment"] >= 7
        and summary["min_treatment_gini_large"] > 0.0
        and elapsed <= 600.0
    )
    report(
        8,
        ok,
        f"marginal wins {summary['marginal_wins_treatment']}/10, "
        f"gini wins {summary['gini_wins_treatment']}/10, "
        f"min treatment gini {summary['min_treatment_gini_large']:.3f}, {elapsed:.0f}s",
    )


def test_c09_dominance_profile_plumbing(sim_world):
    planted = (
        [{"round": 2, "network_size": 5, "dominant_category": "semantic"}] * 2
        + [{"round": 2, "network_size": 5, "dominant_category": "network"}] * 3
        + [{"round": 4, "network_size": 12, "dominant_category": "semantic"}] * 7
        + [{"round": 4, "network_size": 12, "dominant_category": "network"}] * 1
        + [{"round": 2, "network_size": 1, "dominant_category": "semantic"}] * 5
        + [{"round": 2, "network_size": 19, "dominant_category": "network"}] * 5
    )
    rows = dominance_profile(planted)
    by_key = {(r["round"], r["network_size"]): r["fraction_semantic"] for r in rows}
    exact = by_key == {(2, 5): 2 / 5, (4, 12): 7 / 8}
    live = dominance_profile(sim_world["result"].recommendations)
    live_ok = all(
        0.0 <= r["fraction_semantic"] <= 1.0 and 2 <= r["network_size"] <= 18
        for r in live
    ) and bool(live)
    ok = exact and live_ok
    report(9, ok, f"hand-planted fractions exact={exact}, live profile valid={live_ok}")


def test_c10_simulate_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "study": {
            "base": {"n_egos": 8},
            "train": {
                "rfe_enabled": False,
                "cv_folds": 2,
                "grid": [{"n_estimators": 15, "max_depth": 2, "max_leaves": 4}],
            },
        }
    }))
    args = ["simulate", "--trials", "2", "--rounds", "2", "--bootstrap-trials", "2",
            "--seed", "23", "--config", str(cfg)]
    assert cli_main(args + ["--out", str(tmp_path / "r1")]) == 0
    assert cli_main(args + ["--out", str(tmp_path / "r2")]) == 0
    digests = []
    for name in ("metrics.csv", "gini.csv", "collective.csv"):
        pair = []
        for run in ("r1", "r2"):
            with open(tmp_path / run / name, "rb") as fh:
                pair.append(hashlib.sha256(fh.read()).hexdigest())
        digests.append((name, pair[0] == pair[1]))
    ok = all(same for _, same in digests)
    report(10, ok, "byte-identical metric CSVs: " + ", ".join(f"{n}={s}" for n, s in digests))
