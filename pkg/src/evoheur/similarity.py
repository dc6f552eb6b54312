"""Performance profiles, behavioral/code similarity and the matrices that
feed group construction.

Code similarity is a token n-gram approximation: plain and keyword-weighted
n-gram precision (geometric mean, add-one smoothing), averaged over both
directions, with an optional pluggable syntax-subtree component.
"""
from __future__ import annotations

import ast
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import FitnessRecord, HeuristicCandidate
from .executor import candidate_source

# Shift applied when a population-best cost is not strictly positive, so the
# relative profile stays well defined.
_BEST_COST_EPSILON = 1e-9

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

# Control-flow and operator tokens weighted 5x in the keyword-weighted component.
_KEYWORDS = frozenset({
    "def", "return", "if", "elif", "else", "for", "while", "in", "not",
    "and", "or", "lambda", "break", "continue", "import", "from", "try",
    "except", "min", "max", "sum", "abs", "len", "range",
    "+", "-", "*", "/", "%", "=", "<", ">",
})
_KEYWORD_WEIGHT = 5.0
_MAX_NGRAM = 4


@dataclass(frozen=True)
class PerformanceProfile:
    """Relative regret versus the population-best cost, per instance."""

    candidate_id: str
    z: np.ndarray


@dataclass(frozen=True)
class SimilarityMatrix:
    candidate_ids: tuple[str, ...]
    raw: np.ndarray            # pairwise combined similarity
    normalized: np.ndarray     # raw / global max
    dissimilarity: np.ndarray  # 1 - normalized
    excluded_ids: tuple[str, ...] = ()

    def index_of(self, candidate_id: str) -> int:
        return self.candidate_ids.index(candidate_id)


class GroupingUnavailable(RuntimeError):
    """All similarities are zero; the caller should skip grouping this round."""


def performance_profiles(records: Sequence[FitnessRecord]) -> list[PerformanceProfile]:
    """Profiles z = (e - e*) / e* with e* the componentwise best cost.

    Records must all be ok and cover the same instances; failed candidates
    are excluded upstream. Instances whose best cost is <= 0 are shifted so
    the division stays defined.
    """
    if not records:
        raise ValueError("need at least one fitness record")
    lengths = {len(r.per_instance_costs) for r in records}
    if len(lengths) != 1:
        raise ValueError("records cover different instance counts")
    if any(not r.ok for r in records):
        raise ValueError("profiles are defined only for ok records")
    costs = np.asarray([r.per_instance_costs for r in records], dtype=float)
    best = costs.min(axis=0)
    shift = np.where(best <= 0, -best + _BEST_COST_EPSILON, 0.0)
    costs = costs + shift
    best = best + shift
    z = (costs - best) / best
    return [
        PerformanceProfile(rec.candidate_id, row)
        for rec, row in zip(records, z)
    ]


def sim_perf(z_i: np.ndarray, z_j: np.ndarray) -> float:
    """Cosine similarity of two non-negative profiles, in [0, 1].

    Two all-zero profiles are behaviorally identical (both population-best
    everywhere) and score 1; exactly one all-zero profile scores 0.
    """
    a = np.asarray(z_i, dtype=float)
    b = np.asarray(z_j, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"profile length mismatch: {a.shape} vs {b.shape}")
    if np.array_equal(a, b):
        return 1.0
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(min(1.0, max(0.0, float(a @ b) / (na * nb))))


def _tokenize(source: str) -> list[str]:
    return _TOKEN_RE.findall(source)


def _gram_weight(gram: tuple[str, ...]) -> float:
    return _KEYWORD_WEIGHT if any(tok in _KEYWORDS for tok in gram) else 1.0


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _precision_one_way(
    hyp: Sequence[str], ref: Sequence[str], weighted: bool
) -> float:
    """Geometric mean of add-one-smoothed n-gram precisions of hyp against ref.

    Defined as 0 when not a single unigram matches.
    """
    hyp_unigrams = _ngrams(hyp, 1)
    ref_unigrams = _ngrams(ref, 1)
    if not sum(min(c, ref_unigrams[g]) for g, c in hyp_unigrams.items()):
        return 0.0
    n_max = max(1, min(_MAX_NGRAM, len(hyp), len(ref)))
    logs = []
    for n in range(1, n_max + 1):
        hyp_counts = _ngrams(hyp, n)
        ref_counts = _ngrams(ref, n)
        matched = 0.0
        total = 0.0
        for gram, count in hyp_counts.items():
            w = _gram_weight(gram) if weighted else 1.0
            matched += w * min(count, ref_counts[gram])
            total += w * count
        logs.append(math.log((matched + 1.0) / (total + 1.0)))
    return math.exp(sum(logs) / len(logs))


def python_ast_subtree_match(src_a: str, src_b: str) -> float:
    """Optional syntax component: overlap of internal AST node-type counts.

    Returns 0 when either side does not parse as Python.
    """
    try:
        nodes_a = Counter(type(n).__name__ for n in ast.walk(ast.parse(src_a)))
        nodes_b = Counter(type(n).__name__ for n in ast.walk(ast.parse(src_b)))
    except SyntaxError:
        return 0.0
    inter = sum(min(c, nodes_b[t]) for t, c in nodes_a.items())
    denom = max(sum(nodes_a.values()), sum(nodes_b.values()))
    return inter / denom if denom else 0.0


def sim_code(
    src_i: str,
    src_j: str,
    syntax_match: Optional[Callable[[str, str], float]] = None,
) -> float:
    """Token-level code similarity in [0, 1], symmetric by construction."""
    ti, tj = _tokenize(src_i), _tokenize(src_j)
    if not ti or not tj:
        return 0.0
    plain = 0.5 * (
        _precision_one_way(ti, tj, weighted=False)
        + _precision_one_way(tj, ti, weighted=False)
    )
    weighted = 0.5 * (
        _precision_one_way(ti, tj, weighted=True)
        + _precision_one_way(tj, ti, weighted=True)
    )
    components = [plain, weighted]
    if syntax_match is not None:
        components.append(0.5 * (syntax_match(src_i, src_j) + syntax_match(src_j, src_i)))
    return sum(components) / len(components)


def sim_combined(
    z_i: np.ndarray,
    z_j: np.ndarray,
    src_i: str,
    src_j: str,
    alpha: float,
    beta: float,
    syntax_match: Optional[Callable[[str, str], float]] = None,
) -> float:
    """Weighted blend of behavioral and code similarity."""
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    return alpha * sim_perf(z_i, z_j) + beta * sim_code(src_i, src_j, syntax_match)


def build_matrices(
    members: Sequence[tuple[HeuristicCandidate, FitnessRecord]],
    alpha: float,
    beta: float,
    syntax_match: Optional[Callable[[str, str], float]] = None,
) -> SimilarityMatrix:
    """Pairwise combined similarity over the ok members of a population.

    The raw matrix is normalized by its global maximum and complemented into
    dissimilarities. Members with failed records are excluded and reported.
    """
    ok_members = [(c, r) for c, r in members if r.ok]
    excluded = tuple(c.id for c, r in members if not r.ok)
    if len(ok_members) < 2:
        raise ValueError("need at least 2 ok candidates for similarity matrices")
    profiles = performance_profiles([r for _, r in ok_members])
    sources = [candidate_source(c.body) for c, _ in ok_members]
    n = len(ok_members)
    raw = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            value = sim_combined(
                profiles[i].z, profiles[j].z, sources[i], sources[j],
                alpha, beta, syntax_match,
            )
            raw[i, j] = raw[j, i] = value
    top = float(raw.max())
    if top <= 0.0:
        raise GroupingUnavailable("all pairwise similarities are zero")
    normalized = raw / top
    dissimilarity = 1.0 - normalized
    np.fill_diagonal(dissimilarity, 0.0)
    return SimilarityMatrix(
        candidate_ids=tuple(c.id for c, _ in ok_members),
        raw=raw,
        normalized=normalized,
        dissimilarity=dissimilarity,
        excluded_ids=excluded,
    )
