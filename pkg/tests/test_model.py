import itertools
import math

import numpy as np
import pytest

from peermuse import model as M
from peermuse.errors import InvalidInputError, NotReadyError
from peermuse.features import FeatureAssembler
from peermuse.sim import TrialConfig, run_trial
from peermuse.state import IdeaSet, TrialState

from conftest import PLANTED_SIGNAL, planted_dataset


def brute_force_phi(ensemble, z, n_features):
    """Exact Shapley by coalition enumeration, with conditional expectation
    by cover-weighted tree traversal."""

    def cond_exp(tree, s):
        def rec(j):
            if tree.feature[j] < 0:
                return tree.value[j]
            f = int(tree.feature[j])
            if f in s:
                child = tree.left[j] if z[f] < tree.threshold[j] else tree.right[j]
                return rec(int(child))
            l, r = int(tree.left[j]), int(tree.right[j])
            return (tree.cover[l] * rec(l) + tree.cover[r] * rec(r)) / tree.cover[j]

        return rec(0)

    def value(s):
        return ensemble.base_score + ensemble.learning_rate * sum(
            cond_exp(t, s) for t in ensemble.trees
        )

    phi = np.zeros(n_features)
    for j in range(n_features):
        others = [i for i in range(n_features) if i != j]
        for k in range(n_features):
            for s in itertools.combinations(others, k):
                w = (
                    math.factorial(k)
                    * math.factorial(n_features - k - 1)
                    / math.factorial(n_features)
                )
                phi[j] += w * (value(set(s) | {j}) - value(set(s)))
    return phi


class TestBuildDataset:
    def test_full_trial_row_count(self, sim_world):
        # 10 egos x rounds {2, 3} with rounds=3 in the session fixture
        ds = sim_world["dataset"]
        per_trial = 10 * 2
        assert len(ds) == sim_world["study"].bootstrap_trials * per_trial

    def test_18_ego_trial_gives_72_rows(self):
        run = run_trial(TrialConfig(seed=3, trial="ds-check"))
        from peermuse.sim import IdeaUniverse

        universe = IdeaUniverse.generate(TrialConfig(seed=3, trial="ds-check"))
        ds = M.build_dataset([run.state], universe.assembler())
        assert len(ds) == 72

    def test_first_ego_target_is_full_attempt2(self, sim_world):
        ds = sim_world["dataset"]
        # first row of each trial belongs to the first-arriving ego, round 2
        first = ds.ego_ids[0]
        rows = [i for i, e in enumerate(ds.ego_ids) if e == first]
        state = None  # re-derive from the sim fixture
        study = sim_world["study"]
        from peermuse.sim import run_trial as rt

        cfg = study.base.with_(trial="seed-00", condition="control")
        state = rt(cfg, universe=sim_world["universe"],
                   assembler=sim_world["assembler"]).state
        ego = state.arrival_order[0]
        assert first.endswith(f":{ego}")
        expected = len(state.idea_set(ego, 2, 2).bins)
        assert ds.targets[rows[0]] == expected

    def test_three_ego_manual_replay(self, toy_world):
        taxonomy = toy_world["taxonomy"]
        ta, tb = toy_world["table_a"], toy_world["table_b"]
        alters = tuple(f"a{i}" for i in range(1, 7))
        state = TrialState("replay", "control", alters)
        for i, alter in enumerate(alters):
            for t in (1, 2):
                state.set_ideas(
                    alter, t, 1,
                    IdeaSet(frozenset({f"s{i}"}), ("hammer",), (f"w{i}",)),
                )
        bins = {
            ("e1", 1): {"x", "y"}, ("e1", 2): {"x", "z"},
            ("e2", 1): {"x"}, ("e2", 2): {"z", "q"},
            ("e3", 1): {"y"}, ("e3", 2): {"q", "r", "x"},
        }
        for rank, ego in enumerate(("e1", "e2", "e3")):
            state.add_ego(ego)
            for t in (1, 2):
                state.set_ideas(
                    ego, t, 1,
                    IdeaSet(frozenset(bins[(ego, 1)]), ("bead",), ("w3",)),
                )
                state.set_ideas(
                    ego, t, 2,
                    IdeaSet(frozenset(bins[(ego, 2)]), ("pot",), ("w5",)),
                )
            state.set_edges(ego, 1, ("a1", "a2"))
            state.set_edges(ego, 2, ("a1", "a2"))
        ds = M.build_dataset(
            [state], FeatureAssembler(taxonomy, ta, tb), rounds=(2,)
        )
        # hand replay: pools grow e1 -> e2 -> e3 with both attempts
        # e1: pool {} -> target |{x,z}| = 2
        # e2: pool {x,y,z} -> {z,q} \ pool = {q} -> 1
        # e3: pool {x,y,z,q} -> {q,r,x} \ pool = {r} -> 1
        assert list(ds.targets) == [2.0, 1.0, 1.0]

    def test_no_missing_values_after_imputation(self, sim_world):
        assert not np.isnan(sim_world["dataset"].features).any()

    def test_empty_input_raises(self, toy_world):
        with pytest.raises(InvalidInputError):
            M.build_dataset([], toy_world["assembler"])


class TestGroupedSplit:
    def test_360_egos_288_72(self):
        ds = planted_dataset(0)  # 1440 rows, 360 egos
        train, test = M.grouped_split(ds, 0.2, seed=0)
        assert len(set(train.ego_ids)) == 288
        assert len(set(test.ego_ids)) == 72

    def test_zero_overlap(self):
        ds = planted_dataset(1)
        train, test = M.grouped_split(ds, 0.2, seed=5)
        assert not set(train.ego_ids) & set(test.ego_ids)

    def test_deterministic(self):
        ds = planted_dataset(2)
        a = M.grouped_split(ds, 0.2, seed=9)
        b = M.grouped_split(ds, 0.2, seed=9)
        assert a[0].ego_ids == b[0].ego_ids
        assert a[1].ego_ids == b[1].ego_ids


class TestFitGbt:
    def test_constant_target(self):
        rng = np.random.default_rng(0)
        ts = M.TrainingSet.from_arrays(rng.normal(size=(50, 4)), np.full(50, 2.5))
        ens = M.fit_gbt(ts, {"n_estimators": 15}, seed=0)
        pred = ens.predict_raw(rng.normal(size=(10, 4)))
        assert np.abs(pred - 2.5).max() < 1e-9

    def test_depth1_split_matches_exhaustive_oracle(self):
        x = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([1.0, 1.2, 5.0, 5.5])
        ts = M.TrainingSet.from_arrays(x, y)
        ens = M.fit_gbt(
            ts, {"n_estimators": 1, "max_depth": 1, "learning_rate": 1.0,
                 "max_leaves": 2},
            seed=0,
        )
        tree = ens.trees[0]
        # exhaustive oracle over the three split positions, lambda = 1
        best = None
        r = y - y.mean()
        for pos in range(1, 4):
            gl = r[:pos].sum() ** 2 / (pos + 1.0)
            gr = r[pos:].sum() ** 2 / (4 - pos + 1.0)
            gain = 0.5 * (gl + gr - r.sum() ** 2 / 5.0)
            if best is None or gain > best[0]:
                best = (gain, pos)
        pos = best[1]
        assert int(tree.feature[0]) == 0
        assert x[pos - 1, 0] < tree.threshold[0] <= x[pos, 0]

    def test_planted_signal_r2(self):
        ds = planted_dataset(3)
        train, test = M.grouped_split(ds, 0.2, seed=3)
        ens = M.fit_gbt(
            train,
            {"n_estimators": 150, "learning_rate": 0.1, "max_depth": 3,
             "max_leaves": 8},
            seed=3,
        )
        assert M.r2_score(test.targets, ens.predict_raw(test.features)) >= 0.6

    def test_training_loss_monotone(self):
        ds = planted_dataset(4, n_rows=400)
        ens = M.fit_gbt(
            ds, {"n_estimators": 60, "learning_rate": 0.2, "max_leaves": 6}, seed=1
        )
        pred = np.full(len(ds), ens.base_score)
        last = ((ds.targets - pred) ** 2).mean()
        for tree in ens.trees:
            pred = pred + ens.learning_rate * tree.predict(ds.features)
            loss = ((ds.targets - pred) ** 2).mean()
            assert loss <= last + 1e-12
            last = loss

    def test_empty_raises(self):
        ts = M.TrainingSet.from_arrays(np.zeros((0, 3)), np.zeros(0))
        with pytest.raises(InvalidInputError):
            M.fit_gbt(ts, {}, seed=0)

    def test_deterministic_given_seed(self):
        ds = planted_dataset(5, n_rows=200)
        params = {"n_estimators": 20, "subsample": 0.6, "colsample_bytree": 0.5}
        a = M.fit_gbt(ds, params, seed=11)
        b = M.fit_gbt(ds, params, seed=11)
        x = np.random.default_rng(0).normal(size=(20, 36))
        assert np.array_equal(a.predict_raw(x), b.predict_raw(x))

    def test_feature_mask_restricts_splits(self):
        ds = planted_dataset(6, n_rows=400)
        mask = np.zeros(36, dtype=bool)
        mask[[0, 4]] = True
        ens = M.fit_gbt(ds, {"n_estimators": 20}, seed=0, feature_mask=mask)
        used = set()
        for tree in ens.trees:
            used.update(tree.used_features())
        assert used <= {0, 4}


class TestGridSearch:
    def test_single_point_returned(self):
        ds = planted_dataset(7, n_rows=160)
        point = {"n_estimators": 10, "learning_rate": 0.3, "max_depth": 2,
                 "subsample": 1.0, "colsample_bytree": 1.0, "max_leaves": 4}
        best, table = M.grid_search_cv(ds, [point], folds=3, seed=0)
        assert best == M._merge_params(point)
        assert len(table) == 1

    def test_degenerate_fold_r2_zero(self):
        x = np.random.default_rng(0).normal(size=(40, 3))
        ts = M.TrainingSet.from_arrays(x, np.full(40, 1.0))
        best, table = M.grid_search_cv(
            ts, [{"n_estimators": 5}], folds=4, seed=0
        )
        assert table[0]["mean_cv_r2"] == 0.0

    def test_full_grid_cardinality(self):
        assert len(M.expand_grid(M.FULL_GRID)) == 1620

    def test_tie_prefers_fewer_estimators_then_depth(self):
        x = np.random.default_rng(1).normal(size=(40, 3))
        ts = M.TrainingSet.from_arrays(x, np.full(40, 2.0))  # all scores tie at 0
        grid = [
            {"n_estimators": 300, "max_depth": 3},
            {"n_estimators": 100, "max_depth": 10},
            {"n_estimators": 100, "max_depth": 5},
        ]
        best, _ = M.grid_search_cv(ts, grid, folds=2, seed=0)
        assert best["n_estimators"] == 100
        assert best["max_depth"] == 5

    def test_unknown_grid_key_rejected(self):
        with pytest.raises(InvalidInputError):
            M.expand_grid({"bogus": [1]})


class TestRfe:
    def test_constant_feature_dropped_first(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(240, 6))
        x[:, 3] = 1.25
        y = 2 * x[:, 0] + np.sin(x[:, 1]) + 0.1 * rng.normal(size=240)
        ts = M.TrainingSet.from_arrays(x, y, ego_ids=[f"e{i//4}" for i in range(240)])
        res = M.rfe_by_shap(ts, params={"n_estimators": 15}, folds=2, seed=0,
                            min_features=2)
        assert res.eliminated[0] == "f03"

    def test_noise_dropped_before_signal(self):
        ds = planted_dataset(8)
        res = M.rfe_by_shap(
            ds,
            params={"n_estimators": 20, "learning_rate": 0.25, "subsample": 0.6,
                    "max_leaves": 6},
            folds=2,
            seed=8,
        )
        signal_names = {ds.feature_names[i] for i in PLANTED_SIGNAL}
        assert not signal_names & set(res.eliminated)
        assert signal_names <= set(res.history[-1]["features"])

    def test_never_below_floor(self):
        ds = planted_dataset(9, n_rows=240)
        res = M.rfe_by_shap(ds, params={"n_estimators": 8}, folds=2, seed=0,
                            min_features=5)
        assert res.selected.sum() >= 5
        assert len(res.history[-1]["features"]) >= 5

    def test_deterministic(self):
        ds = planted_dataset(10, n_rows=320)
        kw = dict(params={"n_estimators": 10}, folds=2, seed=4, min_features=20)
        a = M.rfe_by_shap(ds, **kw)
        b = M.rfe_by_shap(ds, **kw)
        assert a.eliminated == b.eliminated
        assert np.array_equal(a.selected, b.selected)


class TestPredict:
    def test_clamped_at_zero(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(60, 2))
        y = -3.0 + 0.0 * x[:, 0]
        ens = M.fit_gbt(M.TrainingSet.from_arrays(x, y), {"n_estimators": 5}, seed=0)
        vec = rng.normal(size=2)
        assert ens.predict_raw(vec) < 0
        assert M.predict(ens, vec) == 0.0

    def test_additivity_of_trees(self):
        ds = planted_dataset(11, n_rows=200)
        ens = M.fit_gbt(ds, {"n_estimators": 3, "learning_rate": 0.5}, seed=2)
        x = ds.features[:5]
        manual = np.full(5, ens.base_score)
        for tree in ens.trees:
            manual = manual + ens.learning_rate * tree.predict(x)
        assert np.allclose(ens.predict_raw(x), manual)


class TestTreeShap:
    def test_single_leaf_ensemble(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(30, 3))
        ens = M.fit_gbt(
            M.TrainingSet.from_arrays(x, np.full(30, 1.75)),
            {"n_estimators": 4},
            seed=0,
        )
        att = M.tree_shap(ens, x[0])
        assert np.allclose(att.values, 0.0)
        assert att.base_value == pytest.approx(1.75)

    def test_brute_force_oracle_depth2(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(80, 4))
        y = 2 * x[:, 0] + np.sin(x[:, 1] * 2) + 0.2 * rng.normal(size=80)
        ens = M.fit_gbt(
            M.TrainingSet.from_arrays(x, y),
            {"n_estimators": 10, "max_depth": 2, "learning_rate": 0.3,
             "max_leaves": 4},
            seed=1,
        )
        for i in range(8):
            att = M.tree_shap(ens, x[i])
            oracle = brute_force_phi(ens, x[i], 4)
            assert np.abs(att.values - oracle).max() < 1e-9

    def test_local_accuracy(self):
        ds = planted_dataset(12, n_rows=320)
        ens = M.fit_gbt(ds, {"n_estimators": 40, "max_depth": 4, "max_leaves": 10},
                        seed=0)
        rng = np.random.default_rng(1)
        x = rng.normal(size=(50, 36))
        for row in x:
            att = M.tree_shap(ens, row)
            assert abs(att.prediction - ens.predict_raw(row)) < 1e-6

    def test_batch_equals_recursive(self):
        ds = planted_dataset(13, n_rows=256)
        ens = M.fit_gbt(ds, {"n_estimators": 25, "max_depth": 4, "max_leaves": 9},
                        seed=2)
        x = ds.features[:40]
        phi, base = M.tree_shap_batch(ens, x)
        for i in range(len(x)):
            att = M.tree_shap(ens, x[i])
            assert np.abs(att.values - phi[i]).max() < 1e-9
            assert att.base_value == base


class TestSerialization:
    def test_round_trip(self, tmp_path):
        ds = planted_dataset(14, n_rows=200)
        ens, report = M.train_model(
            ds,
            M.TrainSettings(seed=0, rfe_enabled=False, cv_folds=2,
                            grid=[{"n_estimators": 10}]),
        )
        path = tmp_path / "model.json"
        ens.save(path)
        back = M.TreeEnsemble.load(path)
        x = ds.features[:20]
        assert np.array_equal(ens.predict_raw(x), back.predict_raw(x))
        assert back.metadata["params"] == ens.metadata["params"]
        assert tuple(back.feature_names) == tuple(ens.feature_names)

    def test_missing_model_raises_not_ready(self, tmp_path):
        with pytest.raises(NotReadyError):
            M.TreeEnsemble.load(tmp_path / "nope.json")

    def test_format_guard(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text('{"format": "other/9"}')
        with pytest.raises(InvalidInputError):
            M.TreeEnsemble.load(path)


class TestRidge:
    def test_recovers_linear_signal(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(300, 4))
        y = 2 * x[:, 0] - x[:, 2] + 0.05 * rng.normal(size=300)
        ridge = M.fit_ridge(x, y, alpha=1.0)
        assert M.r2_score(y, ridge.predict(x)) > 0.95


class TestTrainModel:
    def test_end_to_end_report(self):
        ds = planted_dataset(15, n_rows=400)
        ens, report = M.train_model(
            ds,
            M.TrainSettings(seed=1, rfe_enabled=True,
                            rfe_params={"n_estimators": 8}, rfe_folds=2,
                            cv_folds=2, grid=[{"n_estimators": 30}]),
        )
        assert report["test_r2"] > 0.0
        assert report["rfe"] is not None
        assert ens.selected.sum() >= 5
        assert set(ens.metadata) >= {"params", "test_r2", "test_mae"}
