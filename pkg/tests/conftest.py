"""Shared fixtures: a toy semantic world for feature tests, a small
simulated study reused across recommender/sim tests, and the planted
regression dataset used by the learner checks."""

import json

import numpy as np
import pytest

from peermuse.features import FeatureAssembler
from peermuse.metrics import IdeaRecord
from peermuse.model import TrainSettings, TrainingSet, train_model
from peermuse.semantics import EmbeddingTable, Taxonomy
from peermuse.sim import (
    IdeaUniverse,
    StudyConfig,
    TrialConfig,
    bootstrap_training,
    run_experiment,
)
from peermuse.state import IdeaSet, TrialState

PLANTED_SIGNAL = (0, 4, 9)


def planted_dataset(seed, n_rows=1440, n_features=36):
    """Additive nonlinear signal in 3 of 36 features, 4 rows per ego."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n_rows, n_features))
    y = (
        2.0 * np.sin(2.0 * x[:, PLANTED_SIGNAL[0]])
        + 1.5 * np.cos(2.0 * x[:, PLANTED_SIGNAL[1]])
        + 2.0 * (x[:, PLANTED_SIGNAL[2]] > 0)
        + 0.4 * rng.normal(size=n_rows)
    )
    egos = tuple(f"e{i // 4:03d}" for i in range(n_rows))
    return TrainingSet.from_arrays(x, y, ego_ids=egos)


@pytest.fixture(scope="session")
def toy_world():
    """Hand-built taxonomy + embeddings + a 3-ego trial state."""
    taxonomy = Taxonomy(
        {
            "tool": set(),
            "hammer": {"tool"},
            "lever": {"tool"},
            "vessel": set(),
            "pot": {"vessel"},
            "vase": {"pot"},
            "ornament": set(),
            "bead": {"ornament"},
        },
        {
            "hammer": "hammer",
            "lever": "lever",
            "pot": "pot",
            "vase": "vase",
            "bead": "bead",
            "tool": "tool",
        },
    )
    rng = np.random.default_rng(3)
    tokens = [f"w{i}" for i in range(12)]
    table_a = EmbeddingTable.from_vectors(
        "toy-a", {t: rng.normal(size=4) for t in tokens}
    )
    table_b = EmbeddingTable.from_vectors(
        "toy-b", {t: rng.normal(size=3) for t in tokens}
    )

    alters = tuple(f"a{i}" for i in range(1, 7))
    state = TrialState("t0", "control", alters, {a: "F" for a in alters})
    for i, alter in enumerate(alters):
        state.set_ideas(
            alter,
            1,
            1,
            IdeaSet(
                bins=frozenset({f"bin{i}"}),
                concepts=("hammer", "pot") if i % 2 else ("vase",),
                tokens=(tokens[i], tokens[i + 1]),
            ),
        )
    genders = {"e1": "F", "e2": "M", "e3": "F"}
    for ego in ("e1", "e2", "e3"):
        state.add_ego(ego, genders[ego])
        state.set_ideas(
            ego,
            1,
            1,
            IdeaSet(
                bins=frozenset({f"{ego}b1", f"{ego}b2"}),
                concepts=("hammer", "bead"),
                tokens=(tokens[3], tokens[7]),
            ),
        )
        state.set_ideas(
            ego,
            1,
            2,
            IdeaSet(
                bins=frozenset({f"{ego}b3"}),
                concepts=("lever",),
                tokens=(tokens[9],),
            ),
        )
    state.set_edges("e1", 2, ("a1", "a2"))
    state.set_edges("e2", 2, ("a2", "a3"))
    state.set_edges("e3", 2, ("a1", "a4"))
    assembler = FeatureAssembler(taxonomy, table_a, table_b)
    return {
        "taxonomy": taxonomy,
        "table_a": table_a,
        "table_b": table_b,
        "state": state,
        "assembler": assembler,
    }


SIM_TRAIN = {
    "rfe_enabled": False,
    "cv_folds": 2,
    "grid": [
        {
            "n_estimators": 60,
            "learning_rate": 0.1,
            "max_depth": 3,
            "subsample": 1.0,
            "colsample_bytree": 1.0,
            "max_leaves": 8,
        }
    ],
}


@pytest.fixture(scope="session")
def sim_world():
    """Small paired study: 2 trials, 10 egos, 3 rounds, trained model."""
    study = StudyConfig(
        base=TrialConfig(seed=11, n_egos=10, rounds=3),
        n_trials=2,
        bootstrap_trials=4,
        train=SIM_TRAIN,
    )
    universe = IdeaUniverse.generate(study.base)
    dataset, assembler = bootstrap_training(study, universe=universe)
    ensemble, report = train_model(dataset, TrainSettings(seed=11, **SIM_TRAIN))
    result = run_experiment(study, ensemble, universe=universe, assembler=assembler)
    return {
        "study": study,
        "universe": universe,
        "dataset": dataset,
        "assembler": assembler,
        "ensemble": ensemble,
        "report": report,
        "result": result,
    }


def write_text_fixture(root, n_egos=5, rounds=5, seed=5):
    """Text-mode logs plus embedding/taxonomy files for the CLI tests.

    Returns a dict of file paths.
    """
    rng = np.random.default_rng(seed)
    nouns = [
        "hammer", "door", "stop", "paper", "weight", "flower", "pot",
        "brick", "shelf", "anchor", "garden", "bird", "house", "boat",
        "ladder", "window", "bottle", "candle", "basket", "wheel",
    ]
    concepts = {n: f"c_{n}" for n in nouns}
    edges_lines = [f"c_{n}\tc_root" for n in nouns]
    lexicon_lines = [f"{n}\t{concepts[n]}" for n in nouns]
    (root / "taxonomy_edges.tsv").write_text("\n".join(edges_lines) + "\n")
    (root / "taxonomy_lexicon.tsv").write_text("\n".join(lexicon_lines) + "\n")

    for name, dim in (("embeddings_a.txt", 5), ("embeddings_b.txt", 4)):
        lines = []
        for n in nouns:
            vec = rng.normal(size=dim)
            lines.append(n + " " + " ".join(f"{v:.6f}" for v in vec))
        (root / name).write_text("\n".join(lines) + "\n")

    alters = [f"a{i}" for i in range(1, 7)]
    egos = [f"e{i}" for i in range(1, n_egos + 1)]
    idea_records = []
    edge_records = []

    def text_for(author_rng):
        k = int(author_rng.integers(2, 4))
        words = author_rng.choice(nouns, size=k, replace=False)
        return "use it as a " + " ".join(words)

    for t in range(1, rounds + 1):
        for alter in alters:
            for k in range(2):
                idea_records.append(
                    IdeaRecord(
                        idea_id=f"fx:{alter}:r{t}:{k}",
                        author_id=alter,
                        trial="fx",
                        condition="control",
                        round=t,
                        attempt=1,
                        text=text_for(rng),
                    )
                )
    for rank, ego in enumerate(egos):
        for t in range(1, rounds + 1):
            for attempt in (1, 2):
                for k in range(int(rng.integers(1, 4))):
                    idea_records.append(
                        IdeaRecord(
                            idea_id=f"fx:{ego}:r{t}a{attempt}:{k}",
                            author_id=ego,
                            trial="fx",
                            condition="control",
                            round=t,
                            attempt=attempt,
                            text=text_for(rng),
                        )
                    )
        for t in range(1, rounds + 1):
            pair = rng.choice(len(alters), size=2, replace=False)
            for a in sorted(pair):
                edge_records.append(
                    {
                        "trial": "fx",
                        "condition": "control",
                        "round": t,
                        "ego_id": ego,
                        "alter_id": alters[a],
                        "arrival_rank": rank,
                    }
                )

    ideas_path = root / "ideas.jsonl"
    with open(ideas_path, "w", encoding="utf-8") as fh:
        for rec in idea_records:
            fh.write(json.dumps(rec.to_record(), sort_keys=True) + "\n")
    edges_path = root / "edges.jsonl"
    with open(edges_path, "w", encoding="utf-8") as fh:
        for rec in edge_records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    participants = root / "participants.jsonl"
    with open(participants, "w", encoding="utf-8") as fh:
        for i, pid in enumerate(alters + egos):
            fh.write(
                json.dumps(
                    {"participant_id": pid, "gender": "F" if i % 2 else "M"},
                    sort_keys=True,
                )
                + "\n"
            )
    return {
        "ideas": str(ideas_path),
        "edges": str(edges_path),
        "participants": str(participants),
        "embeddings_a": str(root / "embeddings_a.txt"),
        "embeddings_b": str(root / "embeddings_b.txt"),
        "taxonomy_edges": str(root / "taxonomy_edges.tsv"),
        "taxonomy_lexicon": str(root / "taxonomy_lexicon.tsv"),
    }
