"""Decision core: enumerate all alter pairs, score each hypothetical
configuration with the trained model, pick the best, and label the
recommendation by the feature category that drove it.

Tie rules are lexicographic and fixed: the argmax keeps the first
(lowest alter indices) of equal-scoring pairs, and the dominance rule
keeps the first feature in canonical order. round_id belongs to neither
feature category and never competes for dominance.
"""

import csv
import json
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import NotReadyError, SchemaError
from .features import FEATURE_INDEX, FEATURE_NAMES, feature_category
from .model import tree_shap_batch, AttributionVector

EXPLANATION_SEMANTIC = "Recommended for better inspiration"
EXPLANATION_NETWORK = "Recommended for reducing idea redundancy"

MIN_PROFILE_SIZE = 2
MAX_PROFILE_SIZE = 18


@dataclass(frozen=True)
class Candidate:
    pair: tuple
    features: np.ndarray
    score: float
    attribution: AttributionVector


@dataclass(frozen=True)
class Recommendation:
    trial: str
    condition: str
    ego_id: str
    round: int
    network_size: int
    candidates: tuple
    chosen_pair: tuple
    explanation: str
    dominant_feature: str
    dominant_category: str

    def to_record(self):
        return {
            "trial": self.trial,
            "condition": self.condition,
            "ego_id": self.ego_id,
            "round": self.round,
            "network_size": self.network_size,
            "candidates": [
                {"pair": list(c.pair), "score": c.score} for c in self.candidates
            ],
            "chosen_pair": list(self.chosen_pair),
            "explanation": self.explanation,
            "dominant_feature": self.dominant_feature,
            "dominant_category": self.dominant_category,
        }


def explain(candidates, best_index):
    """Feature whose attribution gap between the chosen pair and the other
    candidates is largest, plus the matching explanation label.

    Gap per feature: | |phi_best| - mean over others of |phi| |.
    """
    abs_phi = np.stack([np.abs(c.attribution.values) for c in candidates])
    best = abs_phi[best_index]
    others = np.delete(abs_phi, best_index, axis=0)
    delta = np.abs(best - others.mean(axis=0)) if len(others) else np.zeros_like(best)
    delta = delta.copy()
    delta[FEATURE_INDEX["round_id"]] = -np.inf
    dominant_index = int(np.argmax(delta))
    name = FEATURE_NAMES[dominant_index]
    category = feature_category(name)
    label = EXPLANATION_SEMANTIC if category == "semantic" else EXPLANATION_NETWORK
    return label, name, category


def recommend(state, ego, round_t, ensemble, assembler):
    """Score every alter pair for the ego's upcoming round and pick the best.

    Prior egos' actual round edges form the base of each hypothetical
    network; the chosen pair maximizes the raw predicted score.
    """
    if ensemble is None:
        raise NotReadyError("recommendation requires a trained model")
    pairs = list(combinations(state.alter_ids, 2))
    vecs = np.stack(
        [
            assembler.assemble(
                state, ego, round_t, pair, feature_means=ensemble.feature_means
            )
            for pair in pairs
        ]
    )
    scores = ensemble.predict_raw(vecs)
    phi, base = tree_shap_batch(ensemble, vecs)
    candidates = tuple(
        Candidate(
            pair=pairs[i],
            features=vecs[i],
            score=float(scores[i]),
            attribution=AttributionVector(values=phi[i], base_value=base),
        )
        for i in range(len(pairs))
    )
    best_index = int(np.argmax(scores))
    assert all(candidates[best_index].score >= c.score for c in candidates)
    label, dominant, category = explain(candidates, best_index)
    return Recommendation(
        trial=state.trial,
        condition=state.condition,
        ego_id=ego,
        round=round_t,
        network_size=int(vecs[0][FEATURE_INDEX["network_size"]]),
        candidates=candidates,
        chosen_pair=candidates[best_index].pair,
        explanation=label,
        dominant_feature=dominant,
        dominant_category=category,
    )


def dominance_profile(records):
    """Fraction of semantic-dominated decisions per (round, network size).

    Only network sizes 2..18 enter the profile; size 1 has no meaningful
    structure to compete with.
    """
    groups = {}
    for rec in records:
        if isinstance(rec, Recommendation):
            key = (rec.round, rec.network_size)
            semantic = rec.dominant_category == "semantic"
        else:
            key = (int(rec["round"]), int(rec["network_size"]))
            semantic = rec["dominant_category"] == "semantic"
        if not MIN_PROFILE_SIZE <= key[1] <= MAX_PROFILE_SIZE:
            continue
        n, k = groups.get(key, (0, 0))
        groups[key] = (n + 1, k + int(semantic))
    rows = []
    for (round_t, size), (n, k) in sorted(groups.items()):
        rows.append(
            {
                "round": round_t,
                "network_size": size,
                "n_decisions": n,
                "fraction_semantic": k / n,
            }
        )
    return rows


def write_dominance_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "network_size", "n_decisions", "fraction_semantic"])
        for row in rows:
            writer.writerow(
                [
                    row["round"],
                    row["network_size"],
                    row["n_decisions"],
                    repr(float(row["fraction_semantic"])),
                ]
            )


def write_recommendation_log(path, recommendations):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in recommendations:
            record = rec.to_record() if isinstance(rec, Recommendation) else rec
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_recommendation_log(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                rec["round"], rec["network_size"]
            except (KeyError, ValueError) as exc:
                raise SchemaError(path, i, f"bad recommendation record: {exc}") from exc
            records.append(rec)
    return records
