"""Assembly of the 36-value model input for one (ego, round, alter-pair).

The semantic block is computed from round t-1 idea sets, the network block
from the hypothetical round-t bipartite graph (prior egos' actual choices
plus the focal ego's candidate edges). Field order is fixed and versioned;
distances that cannot be computed (out-of-vocabulary documents, empty idea
sets) come back as NaN and are mean-imputed downstream.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import MissingVocabularyError
from .graph import NETWORK_FEATURE_NAMES, structural_features
from .semantics import creativity_quotient, doc_distance

FEATURE_VERSION = 1

_DISTANCE_STATS = ("ego_alter_min", "ego_alter_max", "ego_alter_mean", "ego_alter_std",
                   "ego_concat", "alter_alter")

SEMANTIC_FEATURE_NAMES = (
    "cq_ego_attempt1",
    "cq_ego_attempt2",
    "cq_ego_combined",
    "cq_alter_sum",
    *(f"cosine_a_{s}" for s in _DISTANCE_STATS),
    *(f"wmd_a_{s}" for s in _DISTANCE_STATS),
    *(f"cosine_b_{s}" for s in _DISTANCE_STATS),
    "gender_diversity",
)

FEATURE_NAMES = SEMANTIC_FEATURE_NAMES + NETWORK_FEATURE_NAMES + ("round_id",)

assert len(FEATURE_NAMES) == 36

FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}


def feature_category(name):
    """'semantic' or 'network'; round_id belongs to neither category."""
    if name in SEMANTIC_FEATURE_NAMES:
        return "semantic"
    if name in NETWORK_FEATURE_NAMES:
        return "network"
    return None


@dataclass(frozen=True)
class Scaler:
    """Frozen per-feature standardization parameters."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, matrix):
        x = np.asarray(matrix, dtype=float)
        return cls(mean=x.mean(axis=0), std=x.std(axis=0))

    def transform(self, x):
        return standardize(x, self.mean, self.std)

    @classmethod
    def identity(cls, n_features):
        return cls(mean=np.zeros(n_features), std=np.ones(n_features))


def standardize(x, mean, std):
    """(x - mean)/std per feature; zero-variance features map to 0."""
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    out = np.zeros_like(x, dtype=float)
    nonzero = std != 0
    if x.ndim == 1:
        out[nonzero] = (x[nonzero] - mean[nonzero]) / std[nonzero]
    else:
        out[:, nonzero] = (x[:, nonzero] - mean[nonzero]) / std[nonzero]
    return out


def impute(x, feature_means):
    """Replace NaNs with stored per-feature means."""
    x = np.array(x, dtype=float)
    means = np.asarray(feature_means, dtype=float)
    mask = np.isnan(x)
    if x.ndim == 1:
        x[mask] = means[mask]
    else:
        x[mask] = np.broadcast_to(means, x.shape)[mask]
    return x


class FeatureAssembler:
    """Builds feature vectors against one semantic snapshot.

    Holds the taxonomy and both embedding tables, and caches quotient and
    distance evaluations keyed by document content so the 15 candidate
    pairs of one ego (and repeated alter-alter pairs) are cheap.
    """

    def __init__(self, taxonomy, table_a, table_b):
        self.taxonomy = taxonomy
        self.table_a = table_a
        self.table_b = table_b
        self._cq_cache = {}
        self._dist_cache = {}

    def quotient(self, concepts):
        key = tuple(sorted(set(concepts)))
        hit = self._cq_cache.get(key)
        if hit is None:
            hit = creativity_quotient(self.taxonomy, key).quotient
            self._cq_cache[key] = hit
        return hit

    def distance(self, method, tokens_a, tokens_b):
        """Distance or NaN when a document is empty/out-of-vocabulary."""
        ka = tuple(sorted(tokens_a))
        kb = tuple(sorted(tokens_b))
        key = (method, ka, kb) if ka <= kb else (method, kb, ka)
        hit = self._dist_cache.get(key)
        if hit is None:
            if not tokens_a or not tokens_b:
                hit = float("nan")
            else:
                try:
                    hit = doc_distance(
                        method, tokens_a, tokens_b,
                        table_a=self.table_a, table_b=self.table_b,
                    )
                except MissingVocabularyError:
                    hit = float("nan")
            self._dist_cache[key] = hit
        return hit

    def assemble(self, state, ego, round_t, pair, feature_means=None):
        """Raw 36-vector for the candidate pair; NaNs unless means given."""
        a, b = sorted(pair)
        prev = round_t - 1
        ego_a1 = state.idea_set(ego, prev, 1)
        ego_a2 = state.idea_set(ego, prev, 2)
        alter_a = state.idea_set(a, prev, 1)
        alter_b = state.idea_set(b, prev, 1)

        values = {}
        values["cq_ego_attempt1"] = self.quotient(ego_a1.concepts)
        values["cq_ego_attempt2"] = self.quotient(ego_a2.concepts)
        values["cq_ego_combined"] = self.quotient(ego_a1.concepts + ego_a2.concepts)
        values["cq_alter_sum"] = self.quotient(alter_a.concepts) + self.quotient(
            alter_b.concepts
        )

        ego_doc = ego_a1.tokens
        concat_doc = alter_a.tokens + alter_b.tokens
        for method in ("cosine_a", "wmd_a", "cosine_b"):
            da = self.distance(method, ego_doc, alter_a.tokens)
            db = self.distance(method, ego_doc, alter_b.tokens)
            if np.isnan(da) or np.isnan(db):
                lo = hi = float("nan")
            else:
                lo, hi = min(da, db), max(da, db)
            values[f"{method}_ego_alter_min"] = lo
            values[f"{method}_ego_alter_max"] = hi
            values[f"{method}_ego_alter_mean"] = (da + db) / 2.0
            values[f"{method}_ego_alter_std"] = abs(da - db) / 2.0
            values[f"{method}_ego_concat"] = self.distance(method, ego_doc, concat_doc)
            values[f"{method}_alter_alter"] = self.distance(method, alter_a.tokens, alter_b.tokens)

        ego_gender = state.gender(ego)
        values["gender_diversity"] = float(
            (state.gender(a) != ego_gender) + (state.gender(b) != ego_gender)
        )

        net = structural_features(state.hypothetical_round(round_t, ego, (a, b)), ego)
        values.update(net)
        values["round_id"] = float(round_t)

        vec = np.array([values[name] for name in FEATURE_NAMES], dtype=float)
        if feature_means is not None:
            vec = impute(vec, feature_means)
        return vec


def write_feature_matrix(path, matrix):
    """CSV export with the canonical header, for offline inspection."""
    x = np.asarray(matrix, dtype=float)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FEATURE_NAMES)
        for row in x:
            writer.writerow([repr(float(v)) for v in row])
