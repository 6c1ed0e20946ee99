"""Trial state: the temporal bipartite network plus per-round idea sets.

A state is filled either by the simulator (ideas arrive pre-binned with
concept ids; document tokens are the bin ids themselves) or from idea/edge
logs of a real deployment (documents are normalized text tokens, concepts
come from the taxonomy lexicon).
"""

from dataclasses import dataclass

from .errors import InvalidInputError, NotFoundError
from .graph import BipartiteRound
from .metrics import RoundPool
from .text import content_tokens



@dataclass(frozen=True)
class IdeaSet:
    """One author's ideas for a (round, attempt): bins, concepts, document."""

    bins: frozenset = frozenset()
    concepts: tuple = ()
    tokens: tuple = ()

    def merged(self, other):
        return IdeaSet(
            bins=self.bins | other.bins,
            concepts=tuple(sorted(set(self.concepts) | set(other.concepts))),
            tokens=self.tokens + other.tokens,
        )


EMPTY_IDEA_SET = IdeaSet()


class TrialState:
    """Mutable while a trial runs; treated as read-only afterwards."""

    def __init__(self, trial, condition, alter_ids, genders=None):
        self.trial = trial
        self.condition = condition
        self.alter_ids = tuple(alter_ids)
        self.genders = dict(genders or {})
        self.arrival_order = []
        self._ideas = {}  # (author, round, attempt) -> IdeaSet
        self._edges = {}  # round -> {ego: (alter, alter)}

    # -- construction -----------------------------------------------------

    def add_ego(self, ego_id, gender="unknown"):
        if ego_id in self.arrival_order:
            raise InvalidInputError(f"ego {ego_id!r} added twice")
        self.arrival_order.append(ego_id)
        self.genders.setdefault(ego_id, gender)

    def set_ideas(self, author, round_index, attempt, idea_set):
        self._ideas[(author, round_index, attempt)] = idea_set

    def set_edges(self, ego, round_index, pair):
        pair = tuple(sorted(pair))
        if len(set(pair)) != 2:
            raise InvalidInputError(f"ego {ego!r} must follow two distinct alters")
        for alter in pair:
            if alter not in self.alter_ids:
                raise NotFoundError(f"unknown alter {alter!r}")
        self._edges.setdefault(round_index, {})[ego] = pair

    # -- access -----------------------------------------------------------

    def gender(self, author):
        return self.genders.get(author, "unknown")

    def arrival_rank(self, ego):
        try:
            return self.arrival_order.index(ego)
        except ValueError:
            raise NotFoundError(f"unknown ego {ego!r}") from None

    def egos_before(self, ego):
        return self.arrival_order[: self.arrival_rank(ego)]

    def idea_set(self, author, round_index, attempt):
        return self._ideas.get((author, round_index, attempt), EMPTY_IDEA_SET)

    def combined_idea_set(self, author, round_index):
        return self.idea_set(author, round_index, 1).merged(
            self.idea_set(author, round_index, 2)
        )

    def actual_pair(self, ego, round_index):
        try:
            return self._edges[round_index][ego]
        except KeyError:
            raise NotFoundError(
                f"no round-{round_index} edges for ego {ego!r}"
            ) from None

    def has_edges(self, ego, round_index):
        return ego in self._edges.get(round_index, {})

    def rounds_with_edges(self):
        return sorted(self._edges)

    def bipartite_round(self, round_index, upto_ego=None):
        """All recorded round edges, optionally truncated at an ego's rank."""
        chosen = self._edges.get(round_index, {})
        order = [e for e in self.arrival_order if e in chosen]
        if upto_ego is not None:
            rank = self.arrival_rank(upto_ego)
            order = [e for e in order if self.arrival_rank(e) <= rank]
        edges = set()
        for ego in order:
            for alter in chosen[ego]:
                edges.add((ego, alter))
        return BipartiteRound(
            round_index=round_index,
            alter_ids=self.alter_ids,
            follow_edges=frozenset(edges),
            ego_arrival_order=tuple(order),
        )

    def hypothetical_round(self, round_index, ego, pair):
        """Prior egos' actual round edges plus the focal ego's candidate pair."""
        pair = tuple(sorted(pair))
        chosen = self._edges.get(round_index, {})
        rank = self.arrival_rank(ego)
        order = [
            e
            for e in self.arrival_order
            if e in chosen and self.arrival_rank(e) < rank
        ]
        edges = set()
        for prior in order:
            for alter in chosen[prior]:
                edges.add((prior, alter))
        for alter in pair:
            if alter not in self.alter_ids:
                raise NotFoundError(f"unknown alter {alter!r}")
            edges.add((ego, alter))
        order.append(ego)
        return BipartiteRound(
            round_index=round_index,
            alter_ids=self.alter_ids,
            follow_edges=frozenset(edges),
            ego_arrival_order=tuple(order),
        )

    def round_pool(self, round_index, include_alters=False):
        """Arrival-ordered pool of egos' bins (both attempts) for one round."""
        contributions = []
        if include_alters:
            seed = set()
            for alter in self.alter_ids:
                seed |= self.idea_set(alter, round_index, 1).bins
            contributions.append(("<alters>", seed))
        for ego in self.arrival_order:
            contributions.append((ego, self.combined_idea_set(ego, round_index).bins))
        return RoundPool.from_contributions(round_index, contributions)


def _document_tokens(records, use_text):
    tokens = []
    for rec in records:
        if use_text:
            tokens.extend(content_tokens(rec.text))
        else:
            tokens.append(rec.bin_id)
    return tuple(tokens)


def state_from_logs(
    trial,
    condition,
    alter_ids,
    idea_records,
    edge_records,
    genders=None,
    taxonomy=None,
):
    """Assemble a TrialState for one (trial, condition) from log records.

    Ideas carrying text use normalized text tokens as their document and,
    when a taxonomy is given, concepts extracted through its lexicon;
    pre-binned ideas use their bin ids as document tokens.
    """
    from .semantics import concepts_from_text

    state = TrialState(trial, condition, alter_ids, genders)
    mine = [
        r
        for r in edge_records
        if r["trial"] == trial and r["condition"] == condition
    ]
    ranked = sorted({(r["arrival_rank"], r["ego_id"]) for r in mine})
    ranks = {}
    for rank, ego in ranked:
        if ego in ranks and ranks[ego] != rank:
            raise InvalidInputError(f"ego {ego!r} has inconsistent arrival ranks")
        ranks[ego] = rank
    for _, ego in sorted((rk, e) for e, rk in ranks.items()):
        if ego not in state.arrival_order:
            state.add_ego(ego, (genders or {}).get(ego, "unknown"))
    per_round = {}
    for rec in mine:
        per_round.setdefault((rec["round"], rec["ego_id"]), set()).add(rec["alter_id"])
    for (round_index, ego), alters in sorted(per_round.items()):
        if len(alters) != 2:
            raise InvalidInputError(
                f"ego {ego!r} has {len(alters)} round-{round_index} edges, expected 2"
            )
        state.set_edges(ego, round_index, tuple(sorted(alters)))

    grouped = {}
    for rec in idea_records:
        if rec.trial != trial or rec.condition != condition:
            continue
        grouped.setdefault((rec.author_id, rec.round, rec.attempt), []).append(rec)
    for (author, round_index, attempt), recs in sorted(grouped.items()):
        recs = sorted(recs, key=lambda r: r.idea_id)
        use_text = all(r.text for r in recs)
        bins = frozenset(r.bin_id for r in recs if r.bin_id)
        concepts = set()
        for r in recs:
            if r.concept_ids:
                concepts.update(r.concept_ids)
            elif use_text and taxonomy is not None:
                concepts.update(concepts_from_text(taxonomy, r.text))
        state.set_ideas(
            author,
            round_index,
            attempt,
            IdeaSet(
                bins=bins,
                concepts=tuple(sorted(concepts)),
                tokens=_document_tokens(recs, use_text),
            ),
        )
    return state


def states_from_logs(idea_records, edge_records, genders=None, taxonomy=None):
    """All (trial, condition) states found in the logs, sorted by key.

    Alters are the alter side of the edge records plus any idea author who
    never appears as an ego (alters' ideas exist even when a snapshot's
    remaining edges do not touch them all).
    """
    keys = sorted({(r["trial"], r["condition"]) for r in edge_records})
    alter_ids = {k: set() for k in keys}
    ego_ids = {k: set() for k in keys}
    for rec in edge_records:
        key = (rec["trial"], rec["condition"])
        alter_ids[key].add(rec["alter_id"])
        ego_ids[key].add(rec["ego_id"])
    for rec in idea_records:
        key = (rec.trial, rec.condition)
        if key in alter_ids and rec.author_id not in ego_ids[key]:
            alter_ids[key].add(rec.author_id)
    states = []
    for trial, condition in keys:
        states.append(
            state_from_logs(
                trial,
                condition,
                tuple(sorted(alter_ids[(trial, condition)])),
                idea_records,
                edge_records,
                genders=genders,
                taxonomy=taxonomy,
            )
        )
    return states
