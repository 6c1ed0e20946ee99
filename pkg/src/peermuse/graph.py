"""Temporal bipartite ego-alter network: one-mode ego projection, the
12-value structural feature block, and the follower-share Gini coefficient.

Projections are tiny (at most the egos of one trial), so every metric is
computed on a dense weight matrix. Conventions (fixed constants):
  * weighted local clustering is the Onnela geometric-mean coefficient,
    weights normalized by the largest weight in the graph; transitivity is
    computed on the unweighted skeleton;
  * betweenness and closeness run on edge distance = 1/weight; betweenness
    is normalized by (n-1)(n-2)/2; closeness is the harmonic variant
    normalized by (n-1), unreachable nodes contributing 0;
  * eigenvector centrality uses raw weights on the focal ego's connected
    component, normalized to unit Euclidean norm; an isolated focal ego
    scores 0;
  * degree centrality is the focal strength divided by 2*(n - 1);
  * PageRank: damping 0.85, uniform teleport, dangling mass redistributed
    uniformly, tolerance 1e-10 (L1, scaled by n), at most 200 iterations;
  * average neighbor degree is the edge-weighted mean of the neighbors'
    plain degrees (weighted by w_ij, divided by the focal strength);
  * size-1 projections define every projection-derived feature as 0.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NotFoundError, SchemaError

ALTERS_PER_EGO = 2

PAGERANK_DAMPING = 0.85
PAGERANK_TOL = 1e-10
PAGERANK_MAX_ITER = 200

NETWORK_FEATURE_NAMES = (
    "network_size",
    "gini",
    "global_clustering",
    "transitivity",
    "local_clustering",
    "degree_centrality",
    "betweenness",
    "eigenvector",
    "closeness",
    "pagerank",
    "avg_neighbor_degree",
    "triangle_count",
)


class DegenerateDistributionWarning(UserWarning):
    """All follower counts are zero; the Gini coefficient is reported as 0."""


@dataclass(frozen=True)
class BipartiteRound:
    """Snapshot of one round's ego->alter follow edges.

    Every ego present must follow exactly ALTERS_PER_EGO distinct alters,
    and the arrival order must list exactly the egos that have edges.
    """

    round_index: int
    alter_ids: tuple
    follow_edges: frozenset
    ego_arrival_order: tuple

    def __post_init__(self):
        object.__setattr__(self, "alter_ids", tuple(self.alter_ids))
        object.__setattr__(self, "follow_edges", frozenset(self.follow_edges))
        object.__setattr__(self, "ego_arrival_order", tuple(self.ego_arrival_order))
        alter_set = set(self.alter_ids)
        if len(alter_set) != len(self.alter_ids):
            raise InvalidInputError("duplicate alter ids")
        order = self.ego_arrival_order
        if len(set(order)) != len(order):
            raise InvalidInputError("an ego appears twice in the arrival order")
        per_ego = {}
        for ego, alter in self.follow_edges:
            if alter not in alter_set:
                raise InvalidInputError(f"edge to unknown alter {alter!r}")
            per_ego.setdefault(ego, set()).add(alter)
        if set(per_ego) != set(order):
            raise InvalidInputError("arrival order and edge set name different egos")
        for ego, alters in per_ego.items():
            if len(alters) != ALTERS_PER_EGO:
                raise InvalidInputError(
                    f"ego {ego!r} follows {len(alters)} alters, expected {ALTERS_PER_EGO}"
                )
        object.__setattr__(
            self, "_alters_by_ego", {e: tuple(sorted(a)) for e, a in per_ego.items()}
        )

    @property
    def egos(self):
        return self.ego_arrival_order

    def alters_of(self, ego):
        try:
            return self._alters_by_ego[ego]
        except KeyError:
            raise NotFoundError(
                f"ego {ego!r} not present in round {self.round_index}"
            ) from None

    def follower_counts(self, upto_ego=None):
        """Follower count per alter, optionally restricted to egos at or
        before ``upto_ego`` in arrival order."""
        if upto_ego is None:
            included = self.ego_arrival_order
        else:
            included = self._egos_upto(upto_ego)
        counts = {a: 0 for a in self.alter_ids}
        for ego in included:
            for alter in self._alters_by_ego[ego]:
                counts[alter] += 1
        return counts

    def _egos_upto(self, ego):
        if ego not in self._alters_by_ego:
            raise NotFoundError(f"ego {ego!r} not present in round {self.round_index}")
        rank = self.ego_arrival_order.index(ego)
        return self.ego_arrival_order[: rank + 1]


@dataclass(frozen=True)
class EgoProjection:
    """Weighted one-mode graph on the egos; weight = shared alter count."""

    nodes: tuple
    weights: dict = field(default_factory=dict)

    def weight(self, a, b):
        if a == b:
            return 0
        key = (a, b) if a <= b else (b, a)
        return self.weights.get(key, 0)

    def weight_matrix(self):
        index = {v: i for i, v in enumerate(self.nodes)}
        w = np.zeros((len(self.nodes), len(self.nodes)))
        for (a, b), weight in self.weights.items():
            w[index[a], index[b]] = w[index[b], index[a]] = weight
        return w


def project_onto_egos(bip_round, upto_ego):
    """Project the bipartite round onto the egos that arrived at or before
    ``upto_ego``; edge weights count shared alters."""
    included = bip_round._egos_upto(upto_ego)
    weights = {}
    for i, a in enumerate(included):
        sa = set(bip_round.alters_of(a))
        for b in included[i + 1 :]:
            shared = len(sa.intersection(bip_round.alters_of(b)))
            if shared:
                key = (a, b) if a <= b else (b, a)
                weights[key] = shared
    return EgoProjection(nodes=tuple(included), weights=weights)


@dataclass(frozen=True)
class FollowerShares:
    """Per-alter follower counts and their normalized shares."""

    counts: tuple
    shares: tuple
    size: int

    @classmethod
    def from_counts(cls, counts):
        counts = tuple(float(c) for c in counts)
        if len(counts) < 1:
            raise InvalidInputError("need at least one alter")
        if any(c < 0 for c in counts):
            raise InvalidInputError("negative follower count")
        total = sum(counts)
        if total > 0:
            shares = tuple(c / total for c in counts)
        else:
            shares = tuple(0.0 for _ in counts)
        return cls(counts=counts, shares=shares, size=len(counts))

    @property
    def degenerate(self):
        return sum(self.counts) == 0


def gini_coefficient(shares):
    """Normalized mean absolute share difference over all alter pairs.

    0 for perfectly even follower counts; an all-zero count vector is
    degenerate and reported as 0 with a warning.
    """
    if isinstance(shares, FollowerShares):
        fs = shares
    else:
        fs = FollowerShares.from_counts(shares)
    if fs.degenerate:
        warnings.warn("all follower counts are zero", DegenerateDistributionWarning)
        return 0.0
    m = np.asarray(fs.shares, dtype=float)
    s = fs.size
    diff_sum = np.abs(m[:, None] - m[None, :]).sum()
    return float(diff_sum / (2.0 * s * m.sum()))


# -- dense metric kernels ----------------------------------------------------


def onnela_clustering(w):
    """Per-node weighted clustering (geometric mean of normalized triangle
    edge weights); 0 for nodes of degree < 2."""
    w = np.asarray(w, dtype=float)
    n = len(w)
    if n == 0 or w.max() == 0:
        return np.zeros(n)
    what = np.cbrt(w / w.max())
    triangles = np.diagonal(what @ what @ what)
    degree = (w > 0).sum(axis=1)
    denom = degree * (degree - 1)
    out = np.zeros(n)
    nz = denom > 0
    out[nz] = triangles[nz] / denom[nz]
    return out


def transitivity(w):
    """3 * triangles / connected triads on the unweighted skeleton."""
    b = (np.asarray(w) > 0).astype(float)
    closed = np.trace(b @ b @ b)
    degree = b.sum(axis=1)
    triads = (degree * (degree - 1)).sum()
    return float(closed / triads) if triads > 0 else 0.0


def triangle_counts(w):
    """Per-node triangle membership counts on the unweighted skeleton."""
    b = (np.asarray(w) > 0).astype(float)
    return np.diagonal(b @ b @ b) / 2.0


def pagerank(w, damping=PAGERANK_DAMPING, tol=PAGERANK_TOL, max_iter=PAGERANK_MAX_ITER):
    """Power iteration with uniform teleport; dangling mass spread uniformly."""
    w = np.asarray(w, dtype=float)
    n = len(w)
    if n == 0:
        return np.zeros(0)
    out_strength = w.sum(axis=1)
    dangling = out_strength == 0
    transition = np.zeros_like(w)
    nz = ~dangling
    transition[nz] = w[nz] / out_strength[nz, None]
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        last = x
        x = damping * (x @ transition + x[dangling].sum() / n) + (1 - damping) / n
        if np.abs(x - last).sum() < n * tol:
            break
    return x


def _dijkstra(w, source):
    """Distances from source with edge length 1/weight; path counts too."""
    n = len(w)
    dist = np.full(n, np.inf)
    sigma = np.zeros(n)
    dist[source] = 0.0
    sigma[source] = 1.0
    done = np.zeros(n, dtype=bool)
    order = []
    for _ in range(n):
        cand = np.where(done, np.inf, dist)
        u = int(np.argmin(cand))
        if not np.isfinite(cand[u]):
            break
        done[u] = True
        order.append(u)
        for v in np.nonzero(w[u])[0]:
            v = int(v)
            if done[v]:
                continue
            alt = dist[u] + 1.0 / w[u, v]
            if alt < dist[v]:
                dist[v] = alt
                sigma[v] = sigma[u]
            elif alt == dist[v]:
                sigma[v] += sigma[u]
    return dist, sigma, order


def betweenness_and_harmonic(w, focal_index):
    """Focal node's betweenness (normalized) and harmonic closeness sums,
    on edge distance = 1/weight."""
    w = np.asarray(w, dtype=float)
    n = len(w)
    if n < 2:
        return 0.0, 0.0
    betweenness = 0.0
    harmonic = 0.0
    for s in range(n):
        dist, sigma, order = _dijkstra(w, s)
        if s == focal_index:
            finite = np.isfinite(dist) & (np.arange(n) != s)
            harmonic = float((1.0 / dist[finite]).sum()) if finite.any() else 0.0
        # Brandes' dependency accumulation
        delta = np.zeros(n)
        for u in reversed(order):
            for v in np.nonzero(w[u])[0]:
                v = int(v)
                if dist[v] == dist[u] + 1.0 / w[u, v]:
                    delta[u] += sigma[u] / sigma[v] * (1.0 + delta[v])
            if u != s and u == focal_index:
                betweenness += delta[u]
    betweenness /= 2.0  # undirected: every pair counted from both endpoints
    norm = (n - 1) * (n - 2) / 2.0
    if norm > 0:
        betweenness /= norm
    return float(betweenness), harmonic


def eigenvector_on_component(w, focal_index):
    """Principal-eigenvector score of the focal node on its own component,
    unit Euclidean norm; isolated focal scores 0."""
    w = np.asarray(w, dtype=float)
    n = len(w)
    member = np.zeros(n, dtype=bool)
    member[focal_index] = True
    frontier = [focal_index]
    while frontier:
        u = frontier.pop()
        for v in np.nonzero(w[u])[0]:
            if not member[v]:
                member[v] = True
                frontier.append(int(v))
    comp = np.nonzero(member)[0]
    if len(comp) == 1:
        return 0.0
    sub = w[np.ix_(comp, comp)]
    vals, vecs = np.linalg.eigh(sub)
    principal = np.abs(vecs[:, -1])
    principal /= np.linalg.norm(principal)
    return float(principal[list(comp).index(focal_index)])


def structural_features(bip_round, focal_ego):
    """The 12 network features for ``focal_ego`` given the bipartite round.

    Egos after the focal one in arrival order are ignored; the Gini
    coefficient is computed from the included egos' alter follower counts.
    """
    projection = project_onto_egos(bip_round, focal_ego)
    n = len(projection.nodes)
    counts = bip_round.follower_counts(upto_ego=focal_ego)
    gini = gini_coefficient([counts[a] for a in bip_round.alter_ids])

    feats = dict.fromkeys(NETWORK_FEATURE_NAMES, 0.0)
    feats["network_size"] = float(n)
    feats["gini"] = gini
    if n == 1:
        return feats

    w = projection.weight_matrix()
    focal = projection.nodes.index(focal_ego)
    clustering = onnela_clustering(w)
    feats["global_clustering"] = float(clustering.mean())
    feats["transitivity"] = transitivity(w)
    feats["local_clustering"] = float(clustering[focal])

    strength = float(w[focal].sum())
    feats["degree_centrality"] = strength / (2.0 * (n - 1))
    bet, harmonic = betweenness_and_harmonic(w, focal)
    feats["betweenness"] = bet
    feats["closeness"] = harmonic / (n - 1)
    feats["eigenvector"] = eigenvector_on_component(w, focal)
    feats["pagerank"] = float(pagerank(w)[focal])
    if strength > 0:
        plain_degree = (w > 0).sum(axis=1)
        feats["avg_neighbor_degree"] = float(w[focal] @ plain_degree / strength)
    feats["triangle_count"] = float(triangle_counts(w)[focal])
    return feats


def round_to_records(bip_round, trial, condition):
    """One record per follow edge, ordered by arrival rank then alter id."""
    records = []
    for rank, ego in enumerate(bip_round.ego_arrival_order):
        for alter in bip_round.alters_of(ego):
            records.append(
                {
                    "trial": trial,
                    "condition": condition,
                    "round": bip_round.round_index,
                    "ego_id": ego,
                    "alter_id": alter,
                    "arrival_rank": rank,
                }
            )
    return records


def round_from_records(records, alter_ids):
    """Rebuild a BipartiteRound from edge records of a single round."""
    records = list(records)
    if not records:
        raise InvalidInputError("no edge records")
    rounds = {r["round"] for r in records}
    if len(rounds) != 1:
        raise InvalidInputError(f"records span several rounds: {sorted(rounds)}")
    by_rank = sorted({(r["arrival_rank"], r["ego_id"]) for r in records})
    order = tuple(e for _, e in by_rank)
    edges = frozenset((r["ego_id"], r["alter_id"]) for r in records)
    return BipartiteRound(
        round_index=rounds.pop(),
        alter_ids=tuple(alter_ids),
        follow_edges=edges,
        ego_arrival_order=order,
    )


def write_edge_log(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_edge_log(path):
    records = []
    required = {"trial", "condition", "round", "ego_id", "alter_id", "arrival_rank"}
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except ValueError as exc:
                raise SchemaError(path, i, f"bad JSON: {exc}") from exc
            missing = required - set(rec)
            if missing:
                raise SchemaError(path, i, f"edge record missing fields {sorted(missing)}")
            records.append(rec)
    return records
