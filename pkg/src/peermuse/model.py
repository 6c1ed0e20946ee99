"""Performance-score model: dataset construction, grouped splitting,
gradient-boosted regression trees, grid-search CV, Shapley-importance
recursive feature elimination, and exact per-tree Shapley attribution.

The booster minimizes squared error with second-order leaf weights
(L2 regularization LAMBDA = 1, no complexity penalty GAMMA = 0), grows
trees best-first under a leaf cap, and is fully deterministic for a given
seed. Attribution follows the path-weight algorithm for tree ensembles;
a vectorized subset-enumeration variant serves batch scoring and is
checked against the recursive form in the tests.
"""

import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NotReadyError
from .features import FEATURE_NAMES, Scaler, impute
from .metrics import marginal_distinct_count

LAMBDA = 1.0

MODEL_FORMAT = "peermuse-model/1"

PARAM_ORDER = (
    "n_estimators",
    "learning_rate",
    "max_depth",
    "subsample",
    "colsample_bytree",
    "max_leaves",
)

# Published-style exhaustive search space (1620 points).
FULL_GRID = {
    "n_estimators": [100, 200, 300],
    "learning_rate": [0.001, 0.01, 0.05, 0.1, 0.2],
    "max_depth": [3, 5, 7, 10],
    "subsample": [0.5, 0.75, 1.0],
    "colsample_bytree": [0.5, 0.75, 1.0],
    "max_leaves": [25, 30, 35],
}

# Small preset used by default so a full train->deploy loop stays fast.
FAST_GRID = [
    {"n_estimators": 60, "learning_rate": 0.1, "max_depth": 3,
     "subsample": 1.0, "colsample_bytree": 1.0, "max_leaves": 8},
    {"n_estimators": 120, "learning_rate": 0.1, "max_depth": 3,
     "subsample": 0.75, "colsample_bytree": 0.75, "max_leaves": 8},
    {"n_estimators": 120, "learning_rate": 0.05, "max_depth": 4,
     "subsample": 1.0, "colsample_bytree": 1.0, "max_leaves": 12},
    {"n_estimators": 200, "learning_rate": 0.05, "max_depth": 3,
     "subsample": 0.75, "colsample_bytree": 1.0, "max_leaves": 8},
]

DEFAULT_PARAMS = {
    "n_estimators": 100,
    "learning_rate": 0.1,
    "max_depth": 3,
    "subsample": 1.0,
    "colsample_bytree": 1.0,
    "max_leaves": 8,
}

RFE_PARAMS = {
    "n_estimators": 25,
    "learning_rate": 0.2,
    "max_depth": 3,
    "subsample": 1.0,
    "colsample_bytree": 1.0,
    "max_leaves": 8,
}


def r2_score(y_true, y_pred):
    """1 - SSE/SST; defined as 0 when the truth is constant."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    sst = float(((y_true - y_true.mean()) ** 2).sum())
    if sst == 0.0:
        return 0.0
    sse = float(((y_true - y_pred) ** 2).sum())
    return 1.0 - sse / sst


def mean_absolute_error(y_true, y_pred):
    return float(np.abs(np.asarray(y_true) - np.asarray(y_pred)).mean())


@dataclass(frozen=True)
class TrainingSet:
    """Feature rows with targets, grouped by ego for splitting."""

    features: np.ndarray
    targets: np.ndarray
    ego_ids: tuple
    rounds: tuple
    feature_names: tuple = FEATURE_NAMES
    feature_means: np.ndarray = None

    @classmethod
    def from_arrays(cls, features, targets, ego_ids=None, rounds=None, feature_names=None):
        features = np.asarray(features, dtype=float)
        targets = np.asarray(targets, dtype=float)
        n = len(targets)
        if ego_ids is None:
            ego_ids = tuple(f"row{i:05d}" for i in range(n))
        if rounds is None:
            rounds = tuple(0 for _ in range(n))
        if feature_names is None:
            feature_names = tuple(f"f{j:02d}" for j in range(features.shape[1]))
        return cls(
            features=features,
            targets=targets,
            ego_ids=tuple(ego_ids),
            rounds=tuple(rounds),
            feature_names=tuple(feature_names),
        )

    def __len__(self):
        return len(self.targets)

    @property
    def n_features(self):
        return self.features.shape[1]

    def unique_egos(self):
        seen = {}
        for e in self.ego_ids:
            seen.setdefault(e, None)
        return tuple(seen)

    def subset(self, indices):
        indices = np.asarray(indices)
        return TrainingSet(
            features=self.features[indices],
            targets=self.targets[indices],
            ego_ids=tuple(self.ego_ids[i] for i in indices),
            rounds=tuple(self.rounds[i] for i in indices),
            feature_names=self.feature_names,
            feature_means=self.feature_means,
        )


def build_dataset(states, assembler, include_alters_in_pool=False,
                  rounds=(2, 3, 4, 5)):
    """Replay trials in arrival order and emit one row per (ego, round).

    Features come from the ego's actual followed pair; the target is the
    marginal distinct count of attempt-2 bins against prior egos' pool.
    NaN feature cells are mean-imputed over the whole dataset and the
    means are kept for serve-time imputation.
    """
    rows, ys, egos, row_rounds = [], [], [], []
    for state in states:
        pools = {
            t: state.round_pool(t, include_alters=include_alters_in_pool)
            for t in rounds
        }
        for ego in state.arrival_order:
            for t in rounds:
                if not state.has_edges(ego, t):
                    continue
                vec = assembler.assemble(state, ego, t, state.actual_pair(ego, t))
                target = marginal_distinct_count(
                    pools[t], ego, state.idea_set(ego, t, 2).bins
                )
                rows.append(vec)
                ys.append(float(target))
                egos.append(f"{state.trial}:{state.condition}:{ego}")
                row_rounds.append(t)
    if not rows:
        raise InvalidInputError("no training rows could be built")
    x = np.vstack(rows)
    means = np.nanmean(np.where(np.isnan(x), np.nan, x), axis=0)
    means = np.nan_to_num(means, nan=0.0)
    x = impute(x, means)
    return TrainingSet(
        features=x,
        targets=np.asarray(ys, dtype=float),
        ego_ids=tuple(egos),
        rounds=tuple(row_rounds),
        feature_names=FEATURE_NAMES,
        feature_means=means,
    )


def grouped_split(train, test_fraction=0.2, seed=0):
    """Split by ego so no ego straddles the boundary; 80:20 by default."""
    egos = sorted(set(train.ego_ids))
    rng = np.random.default_rng(seed)
    order = [egos[i] for i in rng.permutation(len(egos))]
    n_test = int(round(test_fraction * len(egos)))
    test_egos = set(order[:n_test])
    test_idx = [i for i, e in enumerate(train.ego_ids) if e in test_egos]
    train_idx = [i for i, e in enumerate(train.ego_ids) if e not in test_egos]
    return train.subset(train_idx), train.subset(test_idx)


def grouped_folds(ego_ids, n_folds, seed=0):
    """Ego-grouped CV folds as (train_indices, val_indices) pairs."""
    egos = sorted(set(ego_ids))
    n_folds = min(n_folds, len(egos))
    rng = np.random.default_rng(seed)
    order = [egos[i] for i in rng.permutation(len(egos))]
    groups = np.array_split(np.arange(len(order)), n_folds)
    folds = []
    for grp in groups:
        val_egos = {order[i] for i in grp}
        val = [i for i, e in enumerate(ego_ids) if e in val_egos]
        tr = [i for i, e in enumerate(ego_ids) if e not in val_egos]
        folds.append((np.asarray(tr), np.asarray(val)))
    return folds


# -- regression trees -----------------------------------------------------


@dataclass
class RegressionTree:
    feature: np.ndarray   # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    def predict(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        node = np.zeros(len(x), dtype=np.int64)
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                break
            rows = np.nonzero(active)[0]
            vals = x[rows, feat[rows]]
            goes_left = vals < self.threshold[node[rows]]
            node[rows] = np.where(
                goes_left, self.left[node[rows]], self.right[node[rows]]
            )
        return self.value[node]

    def expected_value(self):
        leaf = self.feature < 0
        return float(
            (self.value[leaf] * self.cover[leaf]).sum() / self.cover[0]
        )

    def used_features(self):
        return sorted({int(f) for f in self.feature if f >= 0})


def _best_split_presorted(xs, r, orders, lam=LAMBDA):
    """Exact greedy split over midpoints, given per-feature sorted orders.

    ``orders[:, c]`` lists the node's local row ids sorted by feature c.
    """
    n, f = orders.shape
    if n < 2:
        return None
    cols = np.arange(f)[None, :]
    vs = xs[orders, cols]
    rs = r[orders]
    cum = np.cumsum(rs, axis=0)[:-1]
    total = float(rs[:, 0].sum())
    nl = np.arange(1, n, dtype=float)[:, None]
    gain = 0.5 * (
        cum**2 / (nl + lam)
        + (total - cum) ** 2 / (n - nl + lam)
        - total**2 / (n + lam)
    )
    valid = vs[1:] > vs[:-1]
    if not valid.any():
        return None
    gain = np.where(valid, gain, -np.inf)
    flat = int(np.argmax(gain))
    pos, j = divmod(flat, f)
    best_gain = float(gain[pos, j])
    if not np.isfinite(best_gain) or best_gain <= 0.0:
        return None
    threshold = float((vs[pos, j] + vs[pos + 1, j]) / 2.0)
    return best_gain, int(j), threshold


def _grow_tree(x, residual, rows, params, feats, lam=LAMBDA):
    """Best-first growth: apply the highest-gain split while the leaf cap,
    depth limit and positive gain all allow it.

    Columns are argsorted once at the root; children inherit their sorted
    orders by filtering, so no per-node sort is needed.
    """
    max_depth = params["max_depth"]
    max_leaves = params["max_leaves"]

    xs = x[np.ix_(rows, feats)]
    r = residual[rows]
    n_local = len(rows)
    root_orders = np.argsort(xs, axis=0, kind="stable")

    feature, threshold = [-1], [0.0]
    left, right = [-1], [-1]
    value, cover = [0.0], [float(n_local)]
    node_orders = {0: root_orders}
    node_depth = {0: 0}

    heap = []
    counter = 0

    def consider(node_id):
        nonlocal counter
        if node_depth[node_id] >= max_depth:
            return
        found = _best_split_presorted(xs, r, node_orders[node_id], lam)
        if found is not None:
            gain, j, thr = found
            heapq.heappush(heap, (-gain, counter, node_id, j, thr))
            counter += 1

    consider(0)
    n_leaves = 1
    while heap and n_leaves < max_leaves:
        _, _, node_id, j, thr = heapq.heappop(heap)
        orders = node_orders.pop(node_id)
        n_node, f = orders.shape
        member_left = np.zeros(n_local, dtype=bool)
        node_rows_local = orders[:, 0]
        member_left[node_rows_local[xs[node_rows_local, j] < thr]] = True
        sel = member_left[orders]
        n_left = int(sel[:, 0].sum())
        left_orders = orders.T[sel.T].reshape(f, n_left).T
        right_orders = orders.T[~sel.T].reshape(f, n_node - n_left).T
        for child_orders in (left_orders, right_orders):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            cover.append(float(len(child_orders)))
        lid, rid = len(feature) - 2, len(feature) - 1
        feature[node_id] = int(feats[j])
        threshold[node_id] = thr
        left[node_id], right[node_id] = lid, rid
        node_orders[lid], node_orders[rid] = left_orders, right_orders
        node_depth[lid] = node_depth[rid] = node_depth[node_id] + 1
        n_leaves += 1
        consider(lid)
        consider(rid)

    for node_id, orders in node_orders.items():
        rows_here = orders[:, 0]
        value[node_id] = float(r[rows_here].sum() / (len(rows_here) + lam))

    return RegressionTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=float),
        cover=np.asarray(cover, dtype=float),
    )


@dataclass
class TreeEnsemble:
    """Boosted forest plus the frozen input transforms it was fit with."""

    trees: list
    learning_rate: float
    base_score: float
    feature_names: tuple
    selected: np.ndarray
    scaler: Scaler
    feature_means: np.ndarray
    metadata: dict = field(default_factory=dict)

    def transform(self, x):
        return self.scaler.transform(impute(x, self.feature_means))

    def predict_transformed(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.full(len(z), self.base_score)
        for tree in self.trees:
            out = out + self.learning_rate * tree.predict(z)
        return out

    def predict_raw(self, x):
        """Uncapped prediction; scalar for a single vector."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        out = self.predict_transformed(self.transform(np.atleast_2d(x)))
        return float(out[0]) if single else out

    def predict(self, x):
        """Reported prediction, clamped below at 0."""
        raw = self.predict_raw(x)
        if np.isscalar(raw) or isinstance(raw, float):
            return max(0.0, raw)
        return np.maximum(0.0, raw)

    @property
    def expected_value(self):
        out = self.base_score
        for tree in self.trees:
            out += self.learning_rate * tree.expected_value()
        return out

    def selected_feature_names(self):
        return tuple(
            n for n, keep in zip(self.feature_names, self.selected) if keep
        )

    # -- serialization ----------------------------------------------------

    def to_payload(self):
        return {
            "format": MODEL_FORMAT,
            "learning_rate": self.learning_rate,
            "base_score": self.base_score,
            "feature_names": list(self.feature_names),
            "selected_features": [int(v) for v in self.selected],
            "scaler_mean": [float(v) for v in self.scaler.mean],
            "scaler_std": [float(v) for v in self.scaler.std],
            "feature_means": [float(v) for v in self.feature_means],
            "metadata": self.metadata,
            "trees": [
                {
                    "feature": [int(v) for v in t.feature],
                    "threshold": [float(v) for v in t.threshold],
                    "left": [int(v) for v in t.left],
                    "right": [int(v) for v in t.right],
                    "value": [float(v) for v in t.value],
                    "cover": [float(v) for v in t.cover],
                }
                for t in self.trees
            ],
        }

    @classmethod
    def from_payload(cls, payload):
        if payload.get("format") != MODEL_FORMAT:
            raise InvalidInputError(
                f"unsupported model format {payload.get('format')!r}"
            )
        trees = [
            RegressionTree(
                feature=np.asarray(t["feature"], dtype=np.int64),
                threshold=np.asarray(t["threshold"], dtype=float),
                left=np.asarray(t["left"], dtype=np.int64),
                right=np.asarray(t["right"], dtype=np.int64),
                value=np.asarray(t["value"], dtype=float),
                cover=np.asarray(t["cover"], dtype=float),
            )
            for t in payload["trees"]
        ]
        return cls(
            trees=trees,
            learning_rate=payload["learning_rate"],
            base_score=payload["base_score"],
            feature_names=tuple(payload["feature_names"]),
            selected=np.asarray(payload["selected_features"], dtype=bool),
            scaler=Scaler(
                mean=np.asarray(payload["scaler_mean"], dtype=float),
                std=np.asarray(payload["scaler_std"], dtype=float),
            ),
            feature_means=np.asarray(payload["feature_means"], dtype=float),
            metadata=payload.get("metadata", {}),
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_payload(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_payload(json.load(fh))
        except FileNotFoundError:
            raise NotReadyError(f"model file not found: {path}") from None


def _merge_params(params):
    merged = dict(DEFAULT_PARAMS)
    unknown = set(params) - set(DEFAULT_PARAMS)
    if unknown:
        raise InvalidInputError(f"unknown hyperparameters: {sorted(unknown)}")
    merged.update(params)
    return merged


def fit_gbt(train, params, seed=0, feature_mask=None):
    """Least-squares boosting of best-first regression trees.

    Each tree fits residuals on a row subsample restricted to a feature
    subsample of the (optionally masked) feature set.
    """
    if len(train) == 0:
        raise InvalidInputError("empty training set")
    params = _merge_params(params)
    x = np.asarray(train.features, dtype=float)
    y = np.asarray(train.targets, dtype=float)
    n, n_feats = x.shape
    if feature_mask is None:
        allowed = np.arange(n_feats)
        selected = np.ones(n_feats, dtype=bool)
    else:
        selected = np.asarray(feature_mask, dtype=bool)
        allowed = np.nonzero(selected)[0]
        if not len(allowed):
            raise InvalidInputError("feature mask selects nothing")

    rng = np.random.default_rng(seed)
    base = float(y.mean())
    pred = np.full(n, base)
    trees = []
    n_rows = max(1, int(math.floor(params["subsample"] * n)))
    n_cols = max(1, int(math.ceil(params["colsample_bytree"] * len(allowed))))
    for _ in range(params["n_estimators"]):
        rows = np.sort(rng.choice(n, size=n_rows, replace=False))
        feats = np.sort(rng.choice(allowed, size=n_cols, replace=False))
        residual = y - pred
        tree = _grow_tree(x, residual, rows, params, feats)
        pred = pred + params["learning_rate"] * tree.predict(x)
        trees.append(tree)

    return TreeEnsemble(
        trees=trees,
        learning_rate=params["learning_rate"],
        base_score=base,
        feature_names=train.feature_names,
        selected=selected,
        scaler=Scaler.identity(n_feats),
        feature_means=x.mean(axis=0),
        metadata={"params": params, "seed": seed},
    )


def predict(ensemble, vec):
    """Reported score for one feature vector (clamped below at 0)."""
    return ensemble.predict(vec)


def expand_grid(grid):
    """dict-of-lists -> list of full parameter dicts, canonical order."""
    if isinstance(grid, list):
        return [_merge_params(p) for p in grid]
    keys = [k for k in PARAM_ORDER if k in grid]
    extra = set(grid) - set(PARAM_ORDER)
    if extra:
        raise InvalidInputError(f"unknown grid keys: {sorted(extra)}")
    points = [{}]
    for key in keys:
        points = [dict(p, **{key: v}) for p in points for v in grid[key]]
    return [_merge_params(p) for p in points]


def grid_search_cv(train, grid=None, folds=5, seed=0, feature_mask=None):
    """Ego-grouped k-fold search; select by mean CV R^2.

    Ties prefer fewer estimators, then lower depth, then grid order.
    """
    points = expand_grid(grid if grid is not None else FULL_GRID)
    if not points:
        raise InvalidInputError("empty hyperparameter grid")
    fold_idx = grouped_folds(train.ego_ids, folds, seed=seed)
    table = []
    for i, params in enumerate(points):
        scores = []
        for tr, val in fold_idx:
            ens = fit_gbt(train.subset(tr), params, seed=seed, feature_mask=feature_mask)
            pred = ens.predict_raw(train.features[val])
            scores.append(r2_score(train.targets[val], pred))
        row = dict(params)
        row["mean_cv_r2"] = float(np.mean(scores))
        row["fold_r2"] = [float(s) for s in scores]
        table.append(row)
    best_i = min(
        range(len(points)),
        key=lambda i: (
            -table[i]["mean_cv_r2"],
            points[i]["n_estimators"],
            points[i]["max_depth"],
            i,
        ),
    )
    return points[best_i], table


@dataclass
class RfeResult:
    selected: np.ndarray          # bool mask over all features
    eliminated: tuple             # names in elimination order
    history: tuple                # dicts: features, cv_r2, importance


def _oof_importance(train, active, params, folds, seed):
    """Mean |phi| per active feature over out-of-fold rows, plus CV R^2."""
    fold_idx = grouped_folds(train.ego_ids, folds, seed=seed)
    mask = np.zeros(train.n_features, dtype=bool)
    mask[active] = True
    abs_sum = np.zeros(train.n_features)
    total = 0
    scores = []
    for tr, val in fold_idx:
        ens = fit_gbt(train.subset(tr), params, seed=seed, feature_mask=mask)
        phi, _ = tree_shap_batch(ens, train.features[val])
        abs_sum += np.abs(phi).sum(axis=0)
        total += len(val)
        scores.append(r2_score(train.targets[val], ens.predict_raw(train.features[val])))
    return float(np.mean(scores)), abs_sum / total


def rfe_by_shap(train, params=None, folds=3, seed=0, min_features=5):
    """Drop the feature with the lowest out-of-fold mean |phi|, one per
    round; keep the feature set with the best CV score (ties: fewer
    features). Never goes below ``min_features``."""
    params = _merge_params(params or RFE_PARAMS)
    active = list(range(train.n_features))
    names = train.feature_names
    history = []
    eliminated = []
    while True:
        cv, importance = _oof_importance(train, active, params, folds, seed)
        history.append(
            {
                "features": tuple(names[i] for i in active),
                "cv_r2": cv,
                "importance": {names[i]: float(importance[i]) for i in active},
            }
        )
        if len(active) <= min_features:
            break
        # ties drop the later canonical feature
        drop = min(active, key=lambda i: (importance[i], -i))
        active.remove(drop)
        eliminated.append(names[drop])
    best = max(
        history,
        key=lambda h: (h["cv_r2"], -len(h["features"])),
    )
    selected = np.array([n in best["features"] for n in names], dtype=bool)
    return RfeResult(selected=selected, eliminated=tuple(eliminated), history=tuple(history))


# -- Shapley attribution ----------------------------------------------------


@dataclass(frozen=True)
class AttributionVector:
    """Per-feature Shapley values; base + sum(values) equals the raw
    prediction (local accuracy)."""

    values: np.ndarray
    base_value: float

    @property
    def prediction(self):
        return self.base_value + float(self.values.sum())


def _extend(path, pz, po, pi):
    out = [list(e) for e in path]
    l = len(out)
    out.append([pi, pz, po, 1.0 if l == 0 else 0.0])
    for i in range(l - 1, -1, -1):
        out[i + 1][3] += po * out[i][3] * (i + 1) / (l + 1)
        out[i][3] = pz * out[i][3] * (l - i) / (l + 1)
    return out


def _unwind(path, i):
    out = [list(e) for e in path]
    l = len(out) - 1
    o, z = out[i][2], out[i][1]
    n = out[l][3]
    for j in range(l - 1, -1, -1):
        if o != 0:
            t = out[j][3]
            out[j][3] = n * (l + 1) / ((j + 1) * o)
            n = t - out[j][3] * z * (l - j) / (l + 1)
        else:
            out[j][3] = out[j][3] * (l + 1) / (z * (l - j))
    for j in range(i, l):
        out[j] = [out[j + 1][0], out[j + 1][1], out[j + 1][2], out[j][3]]
    out.pop()
    return out


def _shap_tree_recursive(tree, z, phi, scale):
    feature, threshold = tree.feature, tree.threshold
    left, right = tree.left, tree.right
    value, cover = tree.value, tree.cover

    def recurse(j, path, pz, po, pi):
        path = _extend(path, pz, po, pi)
        if feature[j] < 0:
            v = value[j]
            for i in range(1, len(path)):
                w = sum(e[3] for e in _unwind(path, i))
                d, ez, eo, _ = path[i]
                phi[d] += scale * w * (eo - ez) * v
            return
        f = int(feature[j])
        if z[f] < threshold[j]:
            hot, cold = int(left[j]), int(right[j])
        else:
            hot, cold = int(right[j]), int(left[j])
        iz = io = 1.0
        k = None
        for i in range(1, len(path)):
            if path[i][0] == f:
                k = i
                break
        if k is not None:
            iz, io = path[k][1], path[k][2]
            path = _unwind(path, k)
        rj = cover[j]
        recurse(hot, path, iz * cover[hot] / rj, io, f)
        recurse(cold, path, iz * cover[cold] / rj, 0.0, f)

    recurse(0, [], 1.0, 1.0, -1)


def tree_shap(ensemble, vec):
    """Exact Shapley attribution for one raw feature vector."""
    z = ensemble.transform(np.asarray(vec, dtype=float))
    phi = np.zeros(len(ensemble.feature_names))
    for tree in ensemble.trees:
        _shap_tree_recursive(tree, z, phi, ensemble.learning_rate)
    return AttributionVector(values=phi, base_value=ensemble.expected_value)


def _leaf_paths(tree):
    """(leaf_value, [(feature, passes_fn_threshold, is_left, ratio), ...])"""
    paths = []
    stack = [(0, [])]
    while stack:
        node, edges = stack.pop()
        if tree.feature[node] < 0:
            paths.append((float(tree.value[node]), edges))
            continue
        f = int(tree.feature[node])
        thr = float(tree.threshold[node])
        for child, is_left in ((int(tree.right[node]), False), (int(tree.left[node]), True)):
            ratio = float(tree.cover[child] / tree.cover[node])
            stack.append((child, edges + [(f, thr, is_left, ratio)]))
    return paths


_MAX_ENUM_FEATURES = 12


def _batch_plan(tree):
    """Precomputed structure for the subset-enumeration attribution."""
    feats = tree.used_features()
    m = len(feats)
    pos = {f: i for i, f in enumerate(feats)}
    masks = np.arange(1 << m)
    leaves = []
    for leaf_value, edges in _leaf_paths(tree):
        by_feat = {}
        for f, thr, is_left, ratio in edges:
            entry = by_feat.setdefault(f, {"conds": [], "ratio": 1.0})
            entry["conds"].append((f, thr, is_left))
            entry["ratio"] *= ratio
        leaf_feats = sorted(by_feat)
        # map a global feature mask to this leaf's compressed submask
        submap = np.zeros(1 << m, dtype=np.int64)
        for bi, f in enumerate(leaf_feats):
            submap |= ((masks >> pos[f]) & 1) << bi
        leaves.append(
            {
                "value": leaf_value,
                "feats": leaf_feats,
                "by_feat": by_feat,
                "submap": submap,
            }
        )
    fact = [math.factorial(k) for k in range(m + 1)]
    reductions = []
    for bi, f in enumerate(feats):
        bit = 1 << bi
        without = np.asarray([mk for mk in range(1 << m) if not mk & bit])
        weights = np.asarray(
            [fact[int(mk).bit_count()] * fact[m - 1 - int(mk).bit_count()] / fact[m]
             for mk in without]
        )
        reductions.append((f, without, without | bit, weights))
    return {"feats": feats, "m": m, "leaves": leaves, "reductions": reductions}


def _shap_tree_batch(tree, z, phi, scale):
    feats = tree.used_features()
    m = len(feats)
    if m == 0:
        return
    if m > _MAX_ENUM_FEATURES:
        for i in range(len(z)):
            _shap_tree_recursive(tree, z[i], phi[i], scale)
        return
    plan = getattr(tree, "_batch_plan", None)
    if plan is None:
        plan = _batch_plan(tree)
        tree._batch_plan = plan
    n = len(z)
    f_s = np.zeros((1 << m, n))
    for leaf in plan["leaves"]:
        contrib = np.full((1, n), leaf["value"])
        for f in leaf["feats"]:
            entry = leaf["by_feat"][f]
            ind = np.ones(n, dtype=bool)
            for cf, thr, is_left in entry["conds"]:
                cond = z[:, cf] < thr
                ind &= cond if is_left else ~cond
            contrib = np.vstack([contrib * entry["ratio"], contrib * ind])
        f_s += contrib[leaf["submap"]]
    for f, without, with_, weights in plan["reductions"]:
        phi[:, f] += scale * (weights[:, None] * (f_s[with_] - f_s[without])).sum(axis=0)


def tree_shap_batch(ensemble, x):
    """Vectorized exact attribution for a matrix of raw feature vectors.

    Returns (phi matrix, base value); identical to per-row tree_shap.
    """
    z = ensemble.transform(np.atleast_2d(np.asarray(x, dtype=float)))
    phi = np.zeros((len(z), len(ensemble.feature_names)))
    for tree in ensemble.trees:
        _shap_tree_batch(tree, z, phi, ensemble.learning_rate)
    return phi, ensemble.expected_value


# -- baselines and the end-to-end pipeline ----------------------------------


@dataclass
class RidgeModel:
    coef: np.ndarray
    intercept: float

    def predict(self, x):
        return np.asarray(x, dtype=float) @ self.coef + self.intercept


def fit_ridge(x, y, alpha=1.0):
    """Closed-form ridge with an unpenalized intercept."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xm = x.mean(axis=0)
    ym = y.mean()
    xc = x - xm
    a = xc.T @ xc + alpha * np.eye(x.shape[1])
    coef = np.linalg.solve(a, xc.T @ (y - ym))
    return RidgeModel(coef=coef, intercept=float(ym - xm @ coef))


@dataclass
class TrainSettings:
    seed: int = 0
    test_fraction: float = 0.2
    cv_folds: int = 5
    grid: object = None            # None -> FAST_GRID
    rfe_enabled: bool = True
    rfe_params: dict = None        # None -> RFE_PARAMS
    rfe_folds: int = 3
    min_features: int = 5


def train_model(dataset, settings=None):
    """Full pipeline: grouped split -> standardize -> SHAP-RFE -> grid
    search -> final fit. Returns (ensemble, report)."""
    settings = settings or TrainSettings()
    train, test = grouped_split(dataset, settings.test_fraction, settings.seed)
    feature_means = (
        dataset.feature_means
        if dataset.feature_means is not None
        else train.features.mean(axis=0)
    )
    scaler = Scaler.fit(train.features)
    train_z = TrainingSet(
        features=scaler.transform(train.features),
        targets=train.targets,
        ego_ids=train.ego_ids,
        rounds=train.rounds,
        feature_names=train.feature_names,
    )

    rfe_info = None
    mask = np.ones(train.n_features, dtype=bool)
    if settings.rfe_enabled:
        masked = rfe_by_shap(
            train_z,
            params=settings.rfe_params,
            folds=settings.rfe_folds,
            seed=settings.seed,
            min_features=settings.min_features,
        )
        mask = masked.selected
        rfe_info = {
            "eliminated": list(masked.eliminated),
            "selected": [n for n, k in zip(train.feature_names, mask) if k],
        }

    grid = settings.grid if settings.grid is not None else FAST_GRID
    best_params, cv_table = grid_search_cv(
        train_z, grid, folds=settings.cv_folds, seed=settings.seed,
        feature_mask=mask,
    )
    ensemble = fit_gbt(train_z, best_params, seed=settings.seed, feature_mask=mask)
    ensemble.scaler = scaler
    ensemble.feature_means = np.asarray(feature_means, dtype=float)

    test_pred = ensemble.predict_raw(test.features) if len(test) else np.array([])
    test_r2 = r2_score(test.targets, test_pred) if len(test) else 0.0
    test_mae = mean_absolute_error(test.targets, test_pred) if len(test) else 0.0
    ensemble.metadata = {
        "params": best_params,
        "seed": settings.seed,
        "cv_best_r2": max(r["mean_cv_r2"] for r in cv_table),
        "test_r2": test_r2,
        "test_mae": test_mae,
        "n_train_rows": len(train),
        "n_test_rows": len(test),
        "rfe": rfe_info,
    }
    report = {
        "best_params": best_params,
        "cv_table": cv_table,
        "test_r2": test_r2,
        "test_mae": test_mae,
        "rfe": rfe_info,
    }
    return ensemble, report
