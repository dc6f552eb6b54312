"""Homogeneous clustering and heterogeneous group assembly.

The partition pipeline over-partitions with agglomerative clustering under a
diameter bound, lets the LLM restructure it, and falls back to the input on
any constraint violation; heterogeneous groups mix clusters via
entropy-weighted sampling with largest-remainder rounding.
"""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import squareform

from . import prompts
from .core import derive_seed

DEFAULT_DIAMETER = 0.3


@dataclass(frozen=True)
class Partition:
    clusters: tuple[tuple[str, ...], ...]
    provenance: str  # over_partition | llm_refined | fallback

    def all_ids(self) -> frozenset[str]:
        return frozenset(cid for cluster in self.clusters for cid in cluster)


@dataclass(frozen=True)
class ReflectionGroup:
    members: tuple[str, ...]
    kind: str  # homogeneous | heterogeneous
    source_clusters: tuple[int, ...] = ()


def check_partition(partition: Partition, ids: Sequence[str]) -> list[str]:
    """Coverage and disjointness violations, empty if the partition is valid."""
    problems = []
    seen: set[str] = set()
    universe = set(ids)
    for idx, cluster in enumerate(partition.clusters):
        if not cluster:
            problems.append(f"cluster {idx} is empty")
        for cid in cluster:
            if cid in seen:
                problems.append(f"candidate {cid} appears in multiple clusters")
            seen.add(cid)
            if cid not in universe:
                problems.append(f"candidate {cid} is not in the population")
    missing = universe - seen
    if missing:
        problems.append(f"candidates not covered: {sorted(missing)}")
    return problems


def over_partition(
    ids: Sequence[str],
    dissimilarity: np.ndarray,
    delta: float = DEFAULT_DIAMETER,
    m_target: int = 1,
) -> Partition:
    """Fine agglomerative partition with every cluster diameter <= delta.

    Average-linkage merges are applied in order and stop as soon as either
    the target cluster count is reached or the next merge would exceed the
    diameter bound, whichever leaves more clusters.
    """
    if not 0 < delta <= 1:
        raise ValueError("delta must be in (0, 1]")
    n = len(ids)
    if n == 0:
        raise ValueError("cannot partition an empty id list")
    D = np.asarray(dissimilarity, dtype=float)
    if D.shape != (n, n):
        raise ValueError("dissimilarity matrix shape mismatch")
    m_target = max(1, min(m_target, n))
    clusters: dict[int, list[int]] = {i: [i] for i in range(n)}
    if n > 1:
        merges = linkage(squareform(D, checks=False), method="average")
        next_label = n
        count = n
        for row in merges:
            if count <= m_target:
                break
            a, b = int(row[0]), int(row[1])
            union = clusters[a] + clusters[b]
            diam = float(D[np.ix_(union, union)].max())
            if diam > delta:
                break
            del clusters[a], clusters[b]
            clusters[next_label] = union
            next_label += 1
            count -= 1

    out = sorted((sorted(members) for members in clusters.values()), key=lambda c: c[0])
    partition = Partition(
        clusters=tuple(tuple(ids[i] for i in members) for members in out),
        provenance="over_partition",
    )
    audit_diameters(partition, ids, D, delta)
    return partition


def audit_diameters(
    partition: Partition, ids: Sequence[str], dissimilarity: np.ndarray, delta: float
) -> None:
    """Assert that every cluster's max pairwise dissimilarity is within delta."""
    index = {cid: k for k, cid in enumerate(ids)}
    for cluster in partition.clusters:
        rows = [index[cid] for cid in cluster]
        diam = float(dissimilarity[np.ix_(rows, rows)].max()) if len(rows) > 1 else 0.0
        if diam > delta + 1e-12:
            raise AssertionError(
                f"cluster diameter {diam:.6f} exceeds bound {delta}: {cluster}"
            )


def _extract_json_object(text: str) -> Optional[dict]:
    start = text.find("{")
    end = text.rfind("}")
    if start == -1 or end <= start:
        return None
    try:
        obj = json.loads(text[start:end + 1])
    except json.JSONDecodeError:
        return None
    return obj if isinstance(obj, dict) else None


def llm_refine_partition(
    partition: Partition,
    entries: Sequence[tuple[str, str, float]],
    llm,
    on_violation: Optional[Callable[[str], None]] = None,
) -> Partition:
    """Ask the LLM to restructure the partition; fall back on any violation.

    entries carry (candidate id, source, fitness) for the prompt. The reply
    must be a JSON object with a "groups" list covering every id exactly
    once; anything else returns the input clusters with fallback provenance.
    """
    ids = [cid for cid, _, _ in entries]
    prompt = prompts.clustering_prompt(
        [{"id": cid, "code": src, "score": score} for cid, src, score in entries]
    )
    reply = llm.complete([{"role": "user", "content": prompt}])

    def fallback(reason: str) -> Partition:
        if on_violation is not None:
            on_violation(reason)
        return Partition(clusters=partition.clusters, provenance="fallback")

    obj = _extract_json_object(reply)
    if obj is None or not isinstance(obj.get("groups"), list):
        return fallback("reply is not a JSON object with a 'groups' list")
    clusters = []
    for group in obj["groups"]:
        if not isinstance(group, dict) or not isinstance(group.get("members"), list):
            return fallback("group entry without a 'members' list")
        members = [str(m) for m in group["members"]]
        clusters.append(tuple(members))
    refined = Partition(clusters=tuple(clusters), provenance="llm_refined")
    problems = check_partition(refined, ids)
    if problems:
        return fallback("; ".join(problems))
    return refined


def cluster_entropy(
    members: Sequence[str], sim: Callable[[str, str], float]
) -> float:
    """Entropy of the normalized internal pairwise-similarity distribution.

    Singleton clusters and clusters with no positive pairwise similarity
    have entropy 0 by convention.
    """
    if len(members) < 2:
        return 0.0
    values = [
        max(0.0, float(sim(members[i], members[j])))
        for i in range(len(members))
        for j in range(i + 1, len(members))
    ]
    total = math.fsum(values)
    if total <= 0.0:
        return 0.0
    entropy = -math.fsum(
        (v / total) * math.log(v / total) for v in values if v > 0.0
    )
    return entropy + 0.0  # avoid -0.0 for single-pair clusters


def entropy_weighted_allocation(
    entropies: Sequence[float], sizes: Sequence[int], target: int
) -> list[int]:
    """Per-cluster draw counts: floors of entropy-proportional shares, with
    the leftover (and any over-capacity overflow) handed out by largest
    fractional remainder, ties to the lowest cluster index.

    Totals min(target, sum(sizes)). All-zero entropies fall back to uniform
    weights.
    """
    k = len(entropies)
    if k != len(sizes) or k == 0:
        raise ValueError("need matching, non-empty entropies and sizes")
    if target < 0:
        raise ValueError("target must be >= 0")
    total_entropy = math.fsum(entropies)
    if total_entropy > 0:
        weights = [h / total_entropy for h in entropies]
    else:
        weights = [1.0 / k] * k
    raw = [w * target for w in weights]
    alloc = [math.floor(r) for r in raw]
    remainder_order = sorted(range(k), key=lambda i: (-(raw[i] - alloc[i]), i))
    leftover = target - sum(alloc)
    for i in remainder_order:
        if leftover == 0:
            break
        alloc[i] += 1
        leftover -= 1
    # cap at cluster sizes, pushing overflow to clusters with spare room
    overflow = 0
    for i in range(k):
        if alloc[i] > sizes[i]:
            overflow += alloc[i] - sizes[i]
            alloc[i] = sizes[i]
    while overflow > 0:
        spare = [i for i in remainder_order if alloc[i] < sizes[i]]
        if not spare:
            break
        for i in spare:
            if overflow == 0:
                break
            alloc[i] += 1
            overflow -= 1
    return alloc


def heterogeneous_group(
    clusters: Sequence[Sequence[str]],
    entropies: Sequence[float],
    target_size: int,
    seed: int,
) -> ReflectionGroup:
    """Union of per-cluster uniform draws sized by entropy weights."""
    if not clusters:
        raise ValueError("need at least one cluster")
    if target_size < 1:
        raise ValueError("target size must be >= 1")
    sizes = [len(c) for c in clusters]
    alloc = entropy_weighted_allocation(entropies, sizes, target_size)
    # mix across clusters whenever at least two non-degenerate clusters exist
    nondegenerate = sum(1 for s in sizes if s >= 2)
    used = [i for i, a in enumerate(alloc) if a > 0]
    if sum(alloc) >= 2 and nondegenerate >= 2 and len(used) < 2:
        donor = used[0]
        for i in range(len(clusters)):
            if i != donor and sizes[i] > 0:
                alloc[donor] -= 1
                alloc[i] += 1
                break
    rng = random.Random(seed)
    members: list[str] = []
    source_clusters: list[int] = []
    for idx, cluster in enumerate(clusters):
        if alloc[idx] == 0:
            continue
        members.extend(rng.sample(list(cluster), alloc[idx]))
        source_clusters.append(idx)
    return ReflectionGroup(
        members=tuple(members),
        kind="heterogeneous",
        source_clusters=tuple(source_clusters),
    )


def build_reflection_groups(
    partition: Partition,
    fitness_of: Mapping[str, float],
    sim: Callable[[str, str], float],
    num_elements: int,
    groups_per_crossover: int,
    seed: int,
) -> list[ReflectionGroup]:
    """One homogeneous group per cluster plus the configured heterogeneous mixes.

    Homogeneous groups keep at most num_elements members, selected by best
    fitness within the cluster. A single-candidate population yields one
    singleton group and no heterogeneous groups.
    """
    groups: list[ReflectionGroup] = []
    for idx, cluster in enumerate(partition.clusters):
        ranked = sorted(cluster, key=lambda cid: (fitness_of[cid], cid))
        groups.append(
            ReflectionGroup(
                members=tuple(ranked[:num_elements]),
                kind="homogeneous",
                source_clusters=(idx,),
            )
        )
    total = sum(len(c) for c in partition.clusters)
    if total >= 2:
        entropies = [cluster_entropy(c, sim) for c in partition.clusters]
        for j in range(groups_per_crossover):
            groups.append(
                heterogeneous_group(
                    partition.clusters,
                    entropies,
                    num_elements,
                    seed=derive_seed(seed, "heterogeneous", j),
                )
            )
    return groups
