"""Agent-based replication of the bipartite ego-alter experiment.

Synthetic ideators draw ideas from a per-round bin catalog with Zipf
popularity. Independent (attempt-1) ideas are popularity-weighted draws;
inspired (attempt-2) ideas come from the embedding-space neighborhoods of
the followed alters' bins, never the alters' own bins. Control egos rewire
toward the alters whose ideas look rarest under noisy ratings; treatment
egos follow the recommended pair with probability ``adherence`` and behave
like control egos otherwise.

Randomness is organized as named streams: the idea universe is a function
of the seed alone; alters, arrival order and each ego slot's profile,
behavior and adherence draws have their own streams keyed by trial and
slot (not by condition), so paired conditions see identical draws until a
recommendation is actually followed and adding egos never perturbs the
draws of others.
"""

import hashlib
import json
import zlib
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from .errors import InvalidConfigError, NotReadyError
from .features import FeatureAssembler
from .graph import gini_coefficient, round_to_records
from .metrics import (
    EmbeddingNoveltyScorer,
    IdeaRecord,
    best_novelty_score,
    collective_distinct_count,
    marginal_distinct_count,
    nonredundant_count,
)
from .model import TrainSettings, build_dataset, train_model
from .recommender import dominance_profile, recommend
from .semantics import EmbeddingTable, Taxonomy, creativity_quotient
from .state import IdeaSet, TrialState

CONTROL = "control"
TREATMENT = "treatment"


def stream(seed, *labels):
    """Named deterministic RNG stream."""
    key = tuple(zlib.crc32(str(label).encode("utf-8")) for label in labels)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass(frozen=True)
class AgentProfile:
    fluency: float
    temperature: float
    adherence: float
    gender: str
    rating_noise: float

    def __post_init__(self):
        if not 0.0 <= self.adherence <= 1.0:
            raise InvalidConfigError("adherence must be in [0, 1]")
        if self.fluency < 0:
            raise InvalidConfigError("fluency must be non-negative")


@dataclass(frozen=True)
class TrialConfig:
    trial: str = "trial-00"
    condition: str = CONTROL
    seed: int = 7
    n_alters: int = 6
    n_egos: int = 18
    rounds: int = 5
    alters_per_ego: int = 2
    bins_per_round: int = 144
    cluster_size: int = 8
    cluster_spread: float = 0.3
    zipf_alpha: float = 0.9
    embedding_dim_a: int = 8
    embedding_dim_b: int = 6
    adjacency_k: int = 6
    concepts_per_cluster: int = 3
    concept_count: int = 150
    max_concepts_per_bin: int = 3
    alter_fluency: float = 6.0
    ego_fluency: float = 5.0
    temperature_sigma: float = 0.25
    rating_noise: float = 0.08
    adherence: float = 0.8
    pool_includes_alters: bool = False

    def validate(self):
        if self.condition not in (CONTROL, TREATMENT):
            raise InvalidConfigError(f"unknown condition {self.condition!r}")
        if self.alters_per_ego != 2:
            raise InvalidConfigError("egos follow exactly two alters")
        if self.n_alters < 3:
            raise InvalidConfigError("need at least three alters")
        if self.n_egos < 1 or self.rounds < 0:
            raise InvalidConfigError("n_egos must be >= 1 and rounds >= 0")
        if not 0.0 <= self.adherence <= 1.0:
            raise InvalidConfigError("adherence must be in [0, 1]")
        if self.bins_per_round <= self.adjacency_k:
            raise InvalidConfigError("bins_per_round must exceed adjacency_k")
        if self.zipf_alpha <= 0 or self.ego_fluency <= 0 or self.alter_fluency <= 0:
            raise InvalidConfigError("rates must be positive")
        if self.concept_count < 2 or self.max_concepts_per_bin < 1:
            raise InvalidConfigError("concept settings out of range")
        if self.cluster_size < 2 or self.concepts_per_cluster < 1:
            raise InvalidConfigError("cluster settings out of range")
        if self.max_concepts_per_bin > self.concepts_per_cluster:
            raise InvalidConfigError("max_concepts_per_bin exceeds a cluster's theme")

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class BinInfo:
    bin_id: str
    popularity: float
    rarity: float
    concepts: tuple
    neighbors: tuple


class IdeaUniverse:
    """Per-round bin catalogs with embeddings, concepts and adjacency.

    The universe depends only on the seed, matching a task whose prompts
    are fixed across trials.
    """

    def __init__(self, taxonomy, table_a, table_b, catalog, prompts):
        self.taxonomy = taxonomy
        self.table_a = table_a
        self.table_b = table_b
        self.catalog = catalog  # round -> tuple of BinInfo
        self.prompts = prompts  # round -> prompt token
        self._by_id = {
            t: {b.bin_id: b for b in bins} for t, bins in catalog.items()
        }

    def bins(self, round_index):
        return self.catalog[round_index]

    def info(self, round_index, bin_id):
        return self._by_id[round_index][bin_id]

    @classmethod
    def generate(cls, config):
        """Clustered idea space: bins form tight embedding clusters, each
        cluster carries a small theme of taxonomy concepts, and nearest
        neighbors (the inspiration adjacency) stay within a cluster. Ideas
        from different clusters therefore touch different concepts, and
        following different alters opens genuinely different idea pools."""
        rng = stream(config.seed, "universe")
        concepts = [f"c{i:03d}" for i in range(config.concept_count)]
        parent_links = {concepts[0]: set()}
        for i in range(1, config.concept_count):
            parent_links[concepts[i]] = {concepts[int(rng.integers(0, i))]}
        taxonomy = Taxonomy(parent_links, {c: c for c in concepts})

        vectors_a, vectors_b = {}, {}
        catalog, prompts = {}, {}
        m = config.bins_per_round
        n_clusters = (m + config.cluster_size - 1) // config.cluster_size
        ranks = np.arange(1, m + 1, dtype=float)
        weights = ranks ** (-config.zipf_alpha)
        weights /= weights.sum()
        rarity = 1.0 - weights / weights.max()
        for t in range(1, config.rounds + 1):
            centers_a = rng.normal(size=(n_clusters, config.embedding_dim_a))
            centers_b = rng.normal(size=(n_clusters, config.embedding_dim_b))
            cluster_of = rng.permutation(np.arange(m) % n_clusters)
            vec_a = centers_a[cluster_of] + config.cluster_spread * rng.normal(
                size=(m, config.embedding_dim_a)
            )
            vec_b = centers_b[cluster_of] + config.cluster_spread * rng.normal(
                size=(m, config.embedding_dim_b)
            )
            themes = [
                rng.choice(config.concept_count, size=config.concepts_per_cluster,
                           replace=False)
                for _ in range(n_clusters)
            ]
            n_concepts = rng.integers(1, config.max_concepts_per_bin + 1, size=m)
            dist = np.linalg.norm(vec_a[:, None, :] - vec_a[None, :, :], axis=2)
            np.fill_diagonal(dist, np.inf)
            order = np.argsort(dist, axis=1, kind="stable")
            bins = []
            for i in range(m):
                bin_id = f"r{t}b{i:03d}"
                vectors_a[bin_id] = vec_a[i]
                vectors_b[bin_id] = vec_b[i]
                theme = themes[int(cluster_of[i])]
                chosen = rng.choice(theme, size=int(n_concepts[i]), replace=False)
                bins.append(
                    BinInfo(
                        bin_id=bin_id,
                        popularity=float(weights[i]),
                        rarity=float(rarity[i]),
                        concepts=tuple(sorted(concepts[c] for c in chosen)),
                        neighbors=tuple(
                            f"r{t}b{j:03d}" for j in order[i, : config.adjacency_k]
                        ),
                    )
                )
            catalog[t] = tuple(bins)
            prompt = f"r{t}prompt"
            prompts[t] = prompt
            vectors_a[prompt] = (weights[:, None] * vec_a).sum(axis=0)
            vectors_b[prompt] = (weights[:, None] * vec_b).sum(axis=0)

        if not vectors_a:  # rounds=0: keep the tables well-formed
            vectors_a["<pad>"] = np.zeros(config.embedding_dim_a)
            vectors_b["<pad>"] = np.zeros(config.embedding_dim_b)
        return cls(
            taxonomy=taxonomy,
            table_a=EmbeddingTable.from_vectors("table-a", vectors_a),
            table_b=EmbeddingTable.from_vectors("table-b", vectors_b),
            catalog=catalog,
            prompts=prompts,
        )

    def assembler(self):
        return FeatureAssembler(self.taxonomy, self.table_a, self.table_b)


def _idea_set(infos):
    concepts = set()
    for info in infos:
        concepts.update(info.concepts)
    return IdeaSet(
        bins=frozenset(info.bin_id for info in infos),
        concepts=tuple(sorted(concepts)),
        tokens=tuple(info.bin_id for info in infos),
    )


def _sample_bins(rng, infos, n, temperature=None):
    """Draw bins without replacement; popularity-weighted (skewed by
    temperature) or uniform when temperature is None."""
    if n <= 0 or not infos:
        return []
    take = min(n, len(infos))
    if temperature is None:
        idx = rng.choice(len(infos), size=take, replace=False)
    else:
        weights = np.array([b.popularity for b in infos]) ** (1.0 / temperature)
        idx = rng.choice(len(infos), size=take, replace=False, p=weights / weights.sum())
    return [infos[i] for i in idx]


def initial_pair(rank, alter_ids):
    """Fixed round-1 assignment; blocks of n_alters egos keep every alter at
    equal degree, so the full 18-ego layout starts perfectly egalitarian."""
    n = len(alter_ids)
    block = rank // n
    offset = 1 + block % (n - 1)
    a = rank % n
    b = (a + offset) % n
    return tuple(sorted((alter_ids[a], alter_ids[b])))


@dataclass
class AlterPanel:
    ids: tuple
    genders: dict
    ideas: dict  # (alter_id, round) -> IdeaSet


def generate_alters(universe, config):
    """Pre-recorded alter ideas for one trial (shared by both conditions).

    Within a round alters never repeat each other's bins, so each alter
    covers its own region of the idea space.
    """
    rng = stream(config.seed, config.trial, "alters")
    ids = tuple(f"a{i + 1}" for i in range(config.n_alters))
    genders = {}
    temperatures = {}
    for alter in ids:
        genders[alter] = str(rng.choice(["F", "M"]))
        temperatures[alter] = float(np.exp(rng.normal(0.0, config.temperature_sigma)))
    ideas = {}
    for t in range(1, config.rounds + 1):
        taken = set()
        for alter in ids:
            available = [b for b in universe.bins(t) if b.bin_id not in taken]
            n = max(1, int(rng.poisson(config.alter_fluency)))
            infos = _sample_bins(rng, available, n, temperatures[alter])
            taken.update(info.bin_id for info in infos)
            ideas[(alter, t)] = _idea_set(infos)
    return AlterPanel(ids=ids, genders=genders, ideas=ideas)


@dataclass
class TrialRun:
    config: TrialConfig
    state: TrialState
    ideas: list
    recommendations: list
    ratings: list

    def edge_records(self):
        records = []
        for t in self.state.rounds_with_edges():
            records.extend(
                round_to_records(
                    self.state.bipartite_round(t), self.config.trial, self.config.condition
                )
            )
        return records


def run_trial(config, universe=None, alters=None, ensemble=None, assembler=None):
    """Simulate one condition of one trial.

    Treatment runs need a trained model unless adherence is 0 (in which
    case recommendations are never requested).
    """
    config.validate()
    treatment = config.condition == TREATMENT
    if treatment and ensemble is None and config.adherence > 0 and config.rounds >= 1:
        raise NotReadyError("treatment condition requires a trained model")
    if universe is None:
        universe = IdeaUniverse.generate(config)
    if alters is None:
        alters = generate_alters(universe, config)
    if assembler is None:
        assembler = universe.assembler()

    state = TrialState(config.trial, config.condition, alters.ids, dict(alters.genders))
    for (alter, t), idea_set in sorted(alters.ideas.items()):
        state.set_ideas(alter, t, 1, idea_set)

    idea_records = []
    rec_records = []
    rating_records = []

    def record_ideas(ego, t, attempt, infos):
        for k, info in enumerate(infos):
            idea_records.append(
                IdeaRecord(
                    idea_id=f"{config.trial}:{config.condition}:{ego}:r{t}a{attempt}:{k:02d}",
                    author_id=ego,
                    trial=config.trial,
                    condition=config.condition,
                    round=t,
                    attempt=attempt,
                    bin_id=info.bin_id,
                    concept_ids=info.concepts,
                )
            )

    arrival = stream(config.seed, config.trial, "arrival").permutation(config.n_egos)
    for rank, slot in enumerate(int(s) for s in arrival):
        ego = f"e{slot + 1:02d}"
        prof_rng = stream(config.seed, config.trial, "profile", slot)
        profile = AgentProfile(
            fluency=config.ego_fluency,
            temperature=float(np.exp(prof_rng.normal(0.0, config.temperature_sigma))),
            adherence=config.adherence if treatment else 0.0,
            gender=str(prof_rng.choice(["F", "M"])),
            rating_noise=config.rating_noise,
        )
        rng = stream(config.seed, config.trial, "ego", slot)
        adh_rng = stream(config.seed, config.trial, "adherence", slot)

        state.add_ego(ego, profile.gender)
        state.set_edges(ego, 1, initial_pair(rank, alters.ids))

        for t in range(1, config.rounds + 1):
            # attempt 1: independent, popularity-weighted ideas
            n1 = max(1, int(rng.poisson(profile.fluency)))
            own = _sample_bins(rng, universe.bins(t), n1, profile.temperature)
            state.set_ideas(ego, t, 1, _idea_set(own))
            record_ideas(ego, t, 1, own)

            # attempt 2: inspired draws from the followed alters' neighborhoods
            pair = state.actual_pair(ego, t)
            stimulus = set()
            for alter in pair:
                stimulus |= state.idea_set(alter, t, 1).bins
            candidate_ids = set()
            for bin_id in stimulus:
                candidate_ids.update(universe.info(t, bin_id).neighbors)
            candidate_ids -= stimulus
            candidate_ids -= {info.bin_id for info in own}
            candidates = [universe.info(t, b) for b in sorted(candidate_ids)]
            n2 = int(rng.poisson(profile.fluency))
            # remote-association draws are popularity-agnostic: inspiration
            # reaches bins an independent attempt would rarely surface
            inspired = _sample_bins(rng, candidates, n2)
            state.set_ideas(ego, t, 2, _idea_set(inspired))
            record_ideas(ego, t, 2, inspired)

            # rewiring: rate all alters, then choose round t+1 edges
            qualities = {}
            for alter in alters.ids:
                bins = state.idea_set(alter, t, 1).bins
                rarity = float(
                    np.mean([universe.info(t, b).rarity for b in sorted(bins)])
                    if bins
                    else 0.0
                )
                quality = rarity + float(rng.normal(0.0, profile.rating_noise))
                qualities[alter] = quality
                rating_records.append(
                    {
                        "trial": config.trial,
                        "condition": config.condition,
                        "ego_id": ego,
                        "round": t,
                        "alter_id": alter,
                        "quality": quality,
                        "rating": int(np.clip(round(1 + 4 * quality), 1, 5)),
                    }
                )
            ranked = sorted(alters.ids, key=lambda a: (-qualities[a], a))
            next_pair = tuple(sorted(ranked[:2]))
            if treatment and ensemble is not None:
                recommendation = recommend(state, ego, t + 1, ensemble, assembler)
                rec_records.append(recommendation)
                if adh_rng.random() < profile.adherence:
                    next_pair = recommendation.chosen_pair
            state.set_edges(ego, t + 1, next_pair)

    return TrialRun(
        config=config,
        state=state,
        ideas=idea_records,
        recommendations=rec_records,
        ratings=rating_records,
    )


# -- experiment-level analysis ----------------------------------------------


def metric_rows(run, universe):
    """Per-(ego, round) creativity metrics for one trial run."""
    state = run.state
    config = run.config
    rows = []
    ideas_by_key = {}
    for rec in run.ideas:
        ideas_by_key.setdefault((rec.author_id, rec.round, rec.attempt), []).append(rec)
    for t in range(1, config.rounds + 1):
        pool = state.round_pool(t, include_alters=config.pool_includes_alters)
        bins_by_ego = {
            ego: state.combined_idea_set(ego, t).bins for ego in state.arrival_order
        }
        scorer = EmbeddingNoveltyScorer(universe.table_a, universe.prompts[t])
        for ego in state.arrival_order:
            attempt2 = state.idea_set(ego, t, 2)
            rows.append(
                {
                    "trial": config.trial,
                    "condition": config.condition,
                    "ego": ego,
                    "round": t,
                    "marginal_distinct": marginal_distinct_count(pool, ego, attempt2.bins),
                    "nonredundant": nonredundant_count(bins_by_ego, ego),
                    "cq": creativity_quotient(universe.taxonomy, attempt2.concepts).quotient,
                    "best_novelty": best_novelty_score(
                        scorer, ideas_by_key.get((ego, t, 2), [])
                    ),
                }
            )
    return sorted(rows, key=lambda r: (r["trial"], r["condition"], r["ego"], r["round"]))


def gini_rows(run):
    """Gini of alter follower counts per round and growing network size."""
    state = run.state
    config = run.config
    rows = []
    for t in state.rounds_with_edges():
        if t < 2:
            continue
        bip = state.bipartite_round(t)
        for size, ego in enumerate(bip.ego_arrival_order, start=1):
            counts = bip.follower_counts(upto_ego=ego)
            rows.append(
                {
                    "trial": config.trial,
                    "condition": config.condition,
                    "round": t,
                    "network_size": size,
                    "gini": gini_coefficient([counts[a] for a in state.alter_ids]),
                }
            )
    return rows


def collective_rows(run):
    """Distinct attempt-2 bins accumulated per round by the condition."""
    state = run.state
    config = run.config
    rows = []
    for t in range(1, config.rounds + 1):
        bins = [state.idea_set(e, t, 2).bins for e in state.arrival_order]
        rows.append(
            {
                "trial": config.trial,
                "condition": config.condition,
                "round": t,
                "collective_distinct": collective_distinct_count(bins),
            }
        )
    return rows


@dataclass
class ExperimentResult:
    config: "StudyConfig"
    metrics: list
    ginis: list
    collectives: list
    dominance: list
    summary: dict
    ideas: list
    edges: list
    recommendations: list
    ratings: list


@dataclass(frozen=True)
class StudyConfig:
    base: TrialConfig = TrialConfig()
    n_trials: int = 10
    bootstrap_trials: int = 10
    train: dict = field(default_factory=dict)

    def validate(self):
        self.base.validate()
        if self.n_trials < 1 or self.bootstrap_trials < 0:
            raise InvalidConfigError("trial counts out of range")

    def to_dict(self):
        return {
            "base": asdict(self.base),
            "n_trials": self.n_trials,
            "bootstrap_trials": self.bootstrap_trials,
            "train": dict(self.train),
        }

    @classmethod
    def from_dict(cls, data):
        base = TrialConfig(**data.get("base", {}))
        return cls(
            base=base,
            n_trials=data.get("n_trials", 10),
            bootstrap_trials=data.get("bootstrap_trials", 8),
            train=dict(data.get("train", {})),
        )


def run_experiment(study, ensemble, universe=None, assembler=None):
    """Paired treatment/control trials sharing alters and universe."""
    study.validate()
    if universe is None:
        universe = IdeaUniverse.generate(study.base)
    if assembler is None:
        assembler = universe.assembler()
    metrics, ginis, collectives = [], [], []
    ideas, edges, recs, ratings = [], [], [], []
    per_trial = []
    for i in range(study.n_trials):
        label = f"trial-{i:02d}"
        cfg = study.base.with_(trial=label)
        alters = generate_alters(universe, cfg)
        runs = {}
        for condition in (CONTROL, TREATMENT):
            cond_cfg = cfg.with_(condition=condition)
            runs[condition] = run_trial(
                cond_cfg,
                universe=universe,
                alters=alters,
                ensemble=ensemble if condition == TREATMENT else None,
                assembler=assembler,
            )
        trial_stats = {"trial": label}
        for condition, run in runs.items():
            rows = metric_rows(run, universe)
            grows = gini_rows(run)
            metrics.extend(rows)
            ginis.extend(grows)
            collectives.extend(collective_rows(run))
            ideas.extend(run.ideas)
            edges.extend(run.edge_records())
            recs.extend(run.recommendations)
            ratings.extend(run.ratings)
            trial_stats[f"marginal_mean_{condition}"] = float(
                np.mean([r["marginal_distinct"] for r in rows])
            )
            large = [g["gini"] for g in grows if g["network_size"] > 10]
            trial_stats[f"gini_large_{condition}"] = float(np.mean(large)) if large else 0.0
        per_trial.append(trial_stats)

    dominance = dominance_profile(recs)
    marginal_wins = sum(
        1
        for s in per_trial
        if s["marginal_mean_treatment"] > s["marginal_mean_control"]
    )
    gini_wins = sum(
        1 for s in per_trial if s["gini_large_treatment"] < s["gini_large_control"]
    )
    summary = {
        "n_trials": study.n_trials,
        "per_trial": per_trial,
        "marginal_wins_treatment": marginal_wins,
        "gini_wins_treatment": gini_wins,
        "min_treatment_gini_large": min(
            (s["gini_large_treatment"] for s in per_trial), default=0.0
        ),
        "has_recommendations": bool(recs),
    }
    return ExperimentResult(
        config=study,
        metrics=metrics,
        ginis=ginis,
        collectives=collectives,
        dominance=dominance,
        summary=summary,
        ideas=ideas,
        edges=edges,
        recommendations=recs,
        ratings=ratings,
    )


def bootstrap_training(study, universe=None, n_seed_trials=None):
    """Control-only trials that feed the model-training dataset."""
    study.validate()
    if universe is None:
        universe = IdeaUniverse.generate(study.base)
    assembler = universe.assembler()
    n = study.bootstrap_trials if n_seed_trials is None else n_seed_trials
    states = []
    for i in range(n):
        cfg = study.base.with_(trial=f"seed-{i:02d}", condition=CONTROL)
        run = run_trial(cfg, universe=universe, alters=None, ensemble=None,
                        assembler=assembler)
        states.append(run.state)
    rounds = tuple(t for t in (2, 3, 4, 5) if t <= study.base.rounds)
    dataset = build_dataset(
        states,
        assembler,
        include_alters_in_pool=study.base.pool_includes_alters,
        rounds=rounds,
    )
    return dataset, assembler


def config_hash(study):
    payload = json.dumps(study.to_dict(), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def run_study(study, out_dir):
    """Bootstrap -> train -> paired experiment -> run directory.

    With fewer than two rounds no targets exist, so no model is trained
    and the treatment arm degenerates to control behavior (adherence 0).
    """
    from . import reporting  # local import to avoid a cycle

    study.validate()
    universe = IdeaUniverse.generate(study.base)
    ensemble = None
    train_report = None
    if study.base.rounds >= 2 and study.bootstrap_trials > 0:
        dataset, assembler = bootstrap_training(study, universe=universe)
        settings = TrainSettings(seed=study.base.seed, **study.train)
        ensemble, train_report = train_model(dataset, settings)
    else:
        assembler = universe.assembler()
        study = StudyConfig(
            base=study.base.with_(adherence=0.0),
            n_trials=study.n_trials,
            bootstrap_trials=study.bootstrap_trials,
            train=study.train,
        )
    result = run_experiment(study, ensemble, universe=universe, assembler=assembler)
    reporting.write_run_dir(out_dir, study, result, ensemble, train_report)
    return result
