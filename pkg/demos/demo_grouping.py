"""Grouping math: performance profiles, similarity matrices, entropy sampling.

Builds a small population of behaviorally distinct baselines, derives the
normalized performance profiles and the combined similarity / dissimilarity
matrices, over-partitions under a diameter bound, and assembles an
entropy-weighted heterogeneous group.
"""
import numpy as np

from evoheur import (
    BuiltinBody,
    ExecutorFactory,
    build_matrices,
    cluster_entropy,
    entropy_weighted_allocation,
    fitness,
    generate_bpp_instances,
    heterogeneous_group,
    make_candidate,
    over_partition,
    performance_profiles,
)
from evoheur.core import Origin

instances = generate_bpp_instances(num_items=400, capacity=100, count=6, seed=11)
factory = ExecutorFactory(problem="bpp", timeout=30.0)

members = []
for name, params in [
    ("first_fit", {}),
    ("best_fit", {}),
    ("worst_fit", {}),
    ("weighted_fit", {"residual_weight": 0.5, "index_weight": 0.5}),
    ("weighted_fit", {"residual_weight": 0.1, "index_weight": 2.0}),
]:
    cand = make_candidate(BuiltinBody(name, params), Origin.INIT)
    members.append((cand, fitness(cand, factory, instances)))

print("fitness (mean excess-bins decimal, lower is better):")
for cand, rec in members:
    params = str(cand.body.params) if cand.body.params else ""
    print(f"  {cand.body.name:<14} {params:<46} {rec.fitness:.5f}")

# profiles are relative regret vs the per-instance best: 0 where a candidate
# is population-best on an instance
profiles = performance_profiles([rec for _, rec in members])
print("\nperformance profiles z (rows = candidates):")
print(np.round(np.array([p.z for p in profiles]), 4))

sm = build_matrices(members, alpha=0.5, beta=0.5)
print("\ndissimilarity matrix D (symmetric, zero diagonal, in [0, 1]):")
print(np.round(sm.dissimilarity, 3))

partition = over_partition(sm.candidate_ids, sm.dissimilarity, delta=0.3, m_target=3)
clusters = [[cid[:8] for cid in cluster] for cluster in partition.clusters]
print(f"\nover-partition ({partition.provenance}), diameter bound 0.3: {clusters}")

index = {cid: i for i, cid in enumerate(sm.candidate_ids)}
sim = lambda a, b: float(sm.normalized[index[a], index[b]])
entropies = [cluster_entropy(c, sim) for c in partition.clusters]
print(f"cluster entropies: {[round(h, 4) for h in entropies]}")
sizes = [len(c) for c in partition.clusters]
print(f"entropy-weighted allocation of 4 slots: "
      f"{entropy_weighted_allocation(entropies, sizes, 4)}")
group = heterogeneous_group(partition.clusters, entropies, target_size=4, seed=3)
print(f"heterogeneous group: {[cid[:8] for cid in group.members]} "
      f"from clusters {group.source_clusters}")
