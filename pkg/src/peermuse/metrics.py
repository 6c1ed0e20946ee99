"""Rarity-based creativity scoring over canonical idea bins.

Scoring pools contain prior egos' bins from both attempts; alters' seed
ideas stay out of the pool unless explicitly requested (config switch).
Text binning is a deterministic normalization: spell-fix, drop stop-words,
lemmatize, sort the remaining tokens and join them with no separator, so
compound spellings ("paper weight" / "paperweight") land in the same bin.
"""

import csv
import json
from dataclasses import asdict, dataclass, replace

from .errors import InvalidInputError, SchemaError
from .semantics import cosine_distance
from .text import content_lemmas

DEGENERATE_BIN = "degenerate"

METRIC_REPORT_COLUMNS = (
    "trial",
    "condition",
    "ego",
    "round",
    "marginal_distinct",
    "nonredundant",
    "cq",
    "best_novelty",
)


@dataclass(frozen=True)
class IdeaRecord:
    """One submitted idea."""

    idea_id: str
    author_id: str
    trial: str
    condition: str
    round: int
    attempt: int
    bin_id: str = ""
    text: str = ""
    concept_ids: tuple = ()

    def to_record(self):
        rec = asdict(self)
        rec["concept_ids"] = list(self.concept_ids)
        return rec

    @classmethod
    def from_record(cls, rec):
        return cls(
            idea_id=rec["idea_id"],
            author_id=rec["author_id"],
            trial=rec["trial"],
            condition=rec["condition"],
            round=int(rec["round"]),
            attempt=int(rec["attempt"]),
            bin_id=rec.get("bin_id", ""),
            text=rec.get("text", ""),
            concept_ids=tuple(rec.get("concept_ids", ())),
        )


@dataclass(frozen=True)
class RoundPool:
    """Growing idea pool for one round, ordered by ego arrival."""

    round: int
    contributions: tuple  # of (author_id, frozenset of bin ids)

    @classmethod
    def from_contributions(cls, round_index, contributions):
        return cls(
            round=round_index,
            contributions=tuple((a, frozenset(b)) for a, b in contributions),
        )

    def cumulative(self):
        out = set()
        for _, bins in self.contributions:
            out |= bins
        return out

    def cumulative_before(self, author):
        """Union of bins contributed strictly before ``author``; all of the
        pool when the author is not part of it."""
        out = set()
        for a, bins in self.contributions:
            if a == author:
                return out
            out |= bins
        return out


def marginal_distinct_count(pool, ego, attempt2_bins):
    """New bins this ego adds, relative to earlier contributors' pool."""
    return len(set(attempt2_bins) - pool.cumulative_before(ego))


def nonredundant_count(bins_by_ego, ego):
    """Bins held by ``ego`` that no other ego submitted."""
    if ego not in bins_by_ego:
        raise InvalidInputError(f"unknown ego {ego!r}")
    others = set()
    for other, bins in bins_by_ego.items():
        if other != ego:
            others |= set(bins)
    return len(set(bins_by_ego[ego]) - others)


def collective_distinct_count(bin_sets):
    out = set()
    for bins in bin_sets:
        out |= set(bins)
    return len(out)


def bin_id_for_text(text):
    """Normal form of an idea's text; '' maps to the degenerate bin."""
    lemmas = content_lemmas(text)
    if not lemmas:
        return DEGENERATE_BIN
    return "".join(sorted(lemmas))


def bin_text_ideas(records):
    """Assign normalization-based bin ids to text ideas."""
    out = []
    for rec in records:
        if not rec.text:
            if rec.bin_id:
                out.append(rec)
                continue
            raise InvalidInputError(f"idea {rec.idea_id!r} has neither text nor bin_id")
        out.append(replace(rec, bin_id=bin_id_for_text(rec.text)))
    return out


class EmbeddingNoveltyScorer:
    """Proxy novelty scorer: cosine distance between an idea's token
    centroid and the prompt word's vector.

    This stands in for external semantic-distance raters; its absolute
    values are not comparable to any published scale.
    """

    def __init__(self, table, prompt_token):
        self.table = table
        self.prompt_token = prompt_token

    def __call__(self, idea):
        tokens = content_lemmas(idea.text) if idea.text else [idea.bin_id]
        tokens = [t for t in tokens if t in self.table.vectors]
        if not tokens or self.prompt_token not in self.table.vectors:
            return 0.0
        return cosine_distance(self.table, tokens, [self.prompt_token])


def best_novelty_score(scorer, ideas):
    """Highest scorer value over the ego's ideas for one round; 0 if none."""
    ideas = list(ideas)
    if not ideas:
        return 0.0
    return max(scorer(idea) for idea in ideas)


def write_idea_log(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_record(), sort_keys=True) + "\n")


def read_idea_log(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                records.append(IdeaRecord.from_record(raw))
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(path, i, f"bad idea record: {exc}") from exc
    return records


def write_metric_report(path, rows):
    """CSV report with one row per (trial, condition, ego, round)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_REPORT_COLUMNS)
        for row in rows:
            writer.writerow([row[c] for c in METRIC_REPORT_COLUMNS])
