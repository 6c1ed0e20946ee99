"""Embedding-based document distances and the taxonomy-backed creativity
quotient pipeline.

The information content of a concept is 1 - log(h + 1)/log(w) with h its
transitive hyponym count and w the total concept count (natural log; the
ratio makes the base irrelevant). Pair similarity rescales the information
overlap at the most specific common subsumer, and the quotient of an idea
set is N minus the maximum-spanning-tree weight of the pairwise-similarity
graph. A virtual root is always appended above parentless concepts so any
two concepts share at least one subsumer; the virtual root's information
content is exactly 0.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import InvalidInputError, MissingVocabularyError, NotFoundError
from .text import content_lemmas

VIRTUAL_ROOT = "<root>"

DISTANCE_METHODS = ("cosine_a", "wmd_a", "cosine_b")


@dataclass(frozen=True)
class EmbeddingTable:
    """Token -> vector table; all vectors share one dimension."""

    name: str
    dim: int
    vectors: dict

    @classmethod
    def from_vectors(cls, name, vectors):
        vecs = {}
        dim = None
        for token, v in vectors.items():
            token = token.lower()
            if token in vecs:
                raise InvalidInputError(f"duplicate token {token!r} in table {name}")
            v = np.asarray(v, dtype=float)
            if dim is None:
                dim = v.shape[0]
            elif v.shape[0] != dim:
                raise InvalidInputError(
                    f"token {token!r} has dim {v.shape[0]}, table {name} uses {dim}"
                )
            vecs[token] = v
        if not vecs:
            raise InvalidInputError(f"embedding table {name} is empty")
        return cls(name=name, dim=dim, vectors=vecs)

    @classmethod
    def load(cls, path, name=None):
        """Text format: one ``token v1 v2 ... vdim`` line per token."""
        vectors = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                vectors[parts[0]] = [float(x) for x in parts[1:]]
        return cls.from_vectors(name or str(path), vectors)

    def __contains__(self, token):
        return token in self.vectors

    def vector(self, token):
        try:
            return self.vectors[token]
        except KeyError:
            raise NotFoundError(f"token {token!r} not in table {self.name}") from None

    def known(self, tokens):
        return [t for t in tokens if t in self.vectors]

    def mean_vector(self, tokens):
        known = self.known(tokens)
        if not known:
            raise MissingVocabularyError(
                f"no in-vocabulary token for table {self.name}: {list(tokens)[:5]!r}"
            )
        return np.mean([self.vectors[t] for t in known], axis=0)


class Taxonomy:
    """Concept DAG with 'is a' links, hyponym counts and a token lexicon."""

    def __init__(self, parent_links, lexicon=None):
        concepts = set(parent_links)
        for parents in parent_links.values():
            concepts.update(parents)
        if VIRTUAL_ROOT in concepts:
            raise InvalidInputError(f"concept id {VIRTUAL_ROOT!r} is reserved")
        parents = {c: set(parent_links.get(c, ())) for c in concepts}
        for c, ps in parents.items():
            if c in ps:
                raise InvalidInputError(f"concept {c!r} is its own parent")
        # Virtual root above every parentless concept.
        for c in list(parents):
            if not parents[c]:
                parents[c].add(VIRTUAL_ROOT)
        parents[VIRTUAL_ROOT] = set()

        self.concepts = tuple(sorted(parents))
        self._index = {c: i for i, c in enumerate(self.concepts)}
        self._parents = {c: tuple(sorted(ps)) for c, ps in parents.items()}
        self._children = {c: [] for c in self.concepts}
        for c, ps in self._parents.items():
            for p in ps:
                self._children[p].append(c)
        self._check_acyclic()
        self._descendants = self._count_descendants()
        w = len(self.concepts)
        if w < 2:
            raise InvalidInputError("taxonomy needs at least two concepts")
        self.total_concepts = w
        logw = math.log(w)
        self._info = {
            c: 1.0 - math.log(self._descendants[c] + 1) / logw for c in self.concepts
        }
        self._subsumer_cache = {}
        self.lexicon = {}
        for token, cs in (lexicon or {}).items():
            if isinstance(cs, str):
                cs = (cs,)
            for c in cs:
                if c not in self._index:
                    raise InvalidInputError(f"lexicon maps {token!r} to unknown concept {c!r}")
            self.lexicon.setdefault(token.lower(), set()).update(cs)

    def _check_acyclic(self):
        state = {}
        for start in self.concepts:
            if state.get(start):
                continue
            stack = [(start, iter(self._parents[start]))]
            state[start] = 1
            while stack:
                node, it = stack[-1]
                advanced = False
                for nxt in it:
                    if state.get(nxt) == 1:
                        raise InvalidInputError(f"cycle through concept {nxt!r}")
                    if nxt not in state:
                        state[nxt] = 1
                        stack.append((nxt, iter(self._parents[nxt])))
                        advanced = True
                        break
                if not advanced:
                    state[node] = 2
                    stack.pop()

    def _count_descendants(self):
        """Distinct transitive descendant counts via reverse topological order."""
        masks = {}
        order = []
        seen = set()
        for start in self.concepts:
            if start in seen:
                continue
            stack = [(start, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    order.append(node)
                    continue
                if node in seen:
                    continue
                seen.add(node)
                stack.append((node, True))
                for child in self._children[node]:
                    if child not in seen:
                        stack.append((child, False))
        for node in order:
            mask = 0
            for child in self._children[node]:
                mask |= masks[child] | (1 << self._index[child])
            masks[node] = mask
        return {c: masks[c].bit_count() for c in self.concepts}

    @classmethod
    def load(cls, edges_path, lexicon_path=None):
        """``edges``: child<TAB>parent per line; ``lexicon``: token<TAB>concept."""
        parent_links = {}
        with open(edges_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                child, _, parent = line.partition("\t")
                if not parent:
                    raise InvalidInputError(f"malformed taxonomy edge line: {line!r}")
                parent_links.setdefault(child.strip(), set()).add(parent.strip())
        lexicon = {}
        if lexicon_path is not None:
            with open(lexicon_path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.rstrip("\n")
                    if not line.strip():
                        continue
                    token, _, concept = line.partition("\t")
                    if not concept:
                        raise InvalidInputError(f"malformed lexicon line: {line!r}")
                    lexicon.setdefault(token.strip(), set()).add(concept.strip())
        return cls(parent_links, lexicon)

    def __contains__(self, concept):
        return concept in self._index

    def hyponym_count(self, concept):
        self._require(concept)
        return self._descendants[concept]

    def _require(self, concept):
        if concept not in self._index:
            raise NotFoundError(f"unknown concept {concept!r}")

    def subsumers(self, concept):
        """The concept itself plus all its transitive ancestors."""
        self._require(concept)
        cached = self._subsumer_cache.get(concept)
        if cached is not None:
            return cached
        out = {concept}
        frontier = [concept]
        while frontier:
            node = frontier.pop()
            for parent in self._parents[node]:
                if parent not in out:
                    out.add(parent)
                    frontier.append(parent)
        out = frozenset(out)
        self._subsumer_cache[concept] = out
        return out

    def concepts_for_token(self, token):
        return tuple(sorted(self.lexicon.get(token.lower(), ())))


def information_content(taxonomy, concept):
    """Specificity in [0, 1]: leaves score 1, the (virtual) root scores 0."""
    taxonomy._require(concept)
    return taxonomy._info[concept]


def msca_similarity(taxonomy, c1, c2):
    """Information content of the most specific common subsumer."""
    common = taxonomy.subsumers(c1) & taxonomy.subsumers(c2)
    return max(taxonomy._info[c] for c in common)


def overlap_similarity(content1, content2, shared):
    """Similarity from information contents and their shared part."""
    return 1.0 - (content1 + content2 - 2.0 * shared) / 2.0


def pair_similarity(taxonomy, c1, c2):
    return overlap_similarity(
        information_content(taxonomy, c1),
        information_content(taxonomy, c2),
        msca_similarity(taxonomy, c1, c2),
    )


def maximum_spanning_tree(weights):
    """Prim's algorithm on a dense symmetric weight matrix.

    Returns (total weight, edge list). The tree always spans all nodes,
    so exactly n-1 edges are returned for n >= 1.
    """
    w = np.asarray(weights, dtype=float)
    n = w.shape[0]
    if n == 0:
        return 0.0, []
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = w[0].copy()
    best_from = np.zeros(n, dtype=int)
    edges = []
    total = 0.0
    for _ in range(n - 1):
        cand = np.where(~in_tree, best, -np.inf)
        j = int(np.argmax(cand))
        total += float(best[j])
        a, b = int(best_from[j]), j
        edges.append((min(a, b), max(a, b)))
        in_tree[j] = True
        better = (~in_tree) & (w[j] > best)
        best[better] = w[j][better]
        best_from[better] = j
    return total, edges


@dataclass(frozen=True)
class IdeaSetScore:
    """Creativity quotient of one idea set's distinct concepts."""

    n_concepts: int
    multi_information: float
    quotient: float


def creativity_quotient(taxonomy, concepts):
    """Quotient = N - (max-spanning-tree weight of pairwise similarities).

    Duplicate concepts are collapsed first; an empty set scores 0.
    """
    distinct = sorted(set(concepts))
    for c in distinct:
        taxonomy._require(c)
    n = len(distinct)
    if n == 0:
        return IdeaSetScore(0, 0.0, 0.0)
    if n == 1:
        return IdeaSetScore(1, 0.0, 1.0)
    w = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            w[i, j] = w[j, i] = pair_similarity(taxonomy, distinct[i], distinct[j])
    total, _ = maximum_spanning_tree(w)
    return IdeaSetScore(n, total, float(n) - total)


def concepts_from_text(taxonomy, text):
    """Extract taxonomy concepts from idea text.

    Tokens are lowercased, spell-normalized, stop-word-filtered and
    reduced to noun form; a token mapping to several concepts takes the
    most specific one (highest information content, ties by concept id).
    Unmapped tokens are dropped.
    """
    out = []
    for lemma in content_lemmas(text):
        candidates = taxonomy.concepts_for_token(lemma)
        if not candidates:
            continue
        out.append(max(candidates, key=lambda c: (taxonomy._info[c], c)))
    return tuple(out)


def _bag(tokens, table):
    """Unique in-vocabulary tokens with normalized occurrence mass."""
    counts = {}
    for t in tokens:
        if t in table.vectors:
            counts[t] = counts.get(t, 0) + 1
    if not counts:
        raise MissingVocabularyError(
            f"no in-vocabulary token for table {table.name}: {list(tokens)[:5]!r}"
        )
    uniq = sorted(counts)
    mass = np.array([counts[t] for t in uniq], dtype=float)
    return uniq, mass / mass.sum()


def cosine_distance(table, doc1, doc2):
    """1 - cosine similarity of the documents' mean token vectors."""
    if tuple(sorted(doc1)) == tuple(sorted(doc2)):
        table.mean_vector(doc1)  # still raises on fully OOV input
        return 0.0
    v1 = table.mean_vector(doc1)
    v2 = table.mean_vector(doc2)
    n1 = np.linalg.norm(v1)
    n2 = np.linalg.norm(v2)
    if n1 < 1e-12 or n2 < 1e-12:
        return 1.0  # direction undefined; maximal distance by convention
    return float(1.0 - np.dot(v1, v2) / (n1 * n2))


def word_movers_distance(table, doc1, doc2):
    """Exact optimal-transport cost between the documents' token masses.

    Uniform mass per token occurrence, Euclidean ground cost. The
    transport problem is the classic min-cost-flow LP; small instances
    with a single unique source or sink are solved in closed form, the
    rest through the HiGHS LP solver.
    """
    t1, m1 = _bag(doc1, table)
    t2, m2 = _bag(doc2, table)
    # Canonical argument order makes the distance exactly symmetric.
    if (t2, tuple(m2)) < (t1, tuple(m1)):
        t1, m1, t2, m2 = t2, m2, t1, m1
    if t1 == t2 and np.array_equal(m1, m2):
        return 0.0
    v1 = np.stack([table.vectors[t] for t in t1])
    v2 = np.stack([table.vectors[t] for t in t2])
    cost = np.linalg.norm(v1[:, None, :] - v2[None, :, :], axis=2)
    if len(t1) == 1:
        return float(np.dot(cost[0], m2))
    if len(t2) == 1:
        return float(np.dot(cost[:, 0], m1))
    n, m = cost.shape
    a_eq = []
    for i in range(n):
        row = np.zeros((n, m))
        row[i, :] = 1.0
        a_eq.append(row.ravel())
    for j in range(m):
        col = np.zeros((n, m))
        col[:, j] = 1.0
        a_eq.append(col.ravel())
    a_eq = np.array(a_eq[:-1])  # last constraint is redundant
    b_eq = np.concatenate([m1, m2])[:-1]
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:  # pragma: no cover - tiny feasible LPs always solve
        raise InvalidInputError(f"transport LP failed: {res.message}")
    return float(max(res.fun, 0.0))


def doc_distance(method, doc1, doc2, table_a=None, table_b=None):
    """Dispatch one of the three distance methods on token lists."""
    if method == "cosine_a":
        if table_a is None:
            raise InvalidInputError("cosine_a needs table_a")
        return cosine_distance(table_a, doc1, doc2)
    if method == "wmd_a":
        if table_a is None:
            raise InvalidInputError("wmd_a needs table_a")
        return word_movers_distance(table_a, doc1, doc2)
    if method == "cosine_b":
        if table_b is None:
            raise InvalidInputError("cosine_b needs table_b")
        return cosine_distance(table_b, doc1, doc2)
    raise InvalidInputError(f"unknown distance method {method!r}")
