import math

import numpy as np
import pytest

from evoheur import (
    MockLlm,
    MockRule,
    Partition,
    build_reflection_groups,
    cluster_entropy,
    entropy_weighted_allocation,
    heterogeneous_group,
    llm_refine_partition,
    over_partition,
)
from evoheur.grouping import check_partition


def _ids(n):
    return [f"c{i:02d}" for i in range(n)]


class TestOverPartition:
    def test_all_zero_dissimilarity_honors_target(self):
        ids = _ids(6)
        part = over_partition(ids, np.zeros((6, 6)), delta=0.3, m_target=2)
        assert len(part.clusters) == 2
        assert part.provenance == "over_partition"
        assert not check_partition(part, ids)

    def test_two_tight_blobs_forced_apart(self):
        ids = _ids(4)
        D = np.array([
            [0.0, 0.02, 1.0, 1.0],
            [0.02, 0.0, 1.0, 1.0],
            [1.0, 1.0, 0.0, 0.01],
            [1.0, 1.0, 0.01, 0.0],
        ])
        part = over_partition(ids, D, delta=0.3, m_target=1)
        assert sorted(map(sorted, part.clusters)) == [["c00", "c01"], ["c02", "c03"]]

    def test_diameter_audit_on_random_matrices(self):
        rng = np.random.default_rng(23)
        for _ in range(25):
            n = int(rng.integers(2, 13))
            raw = rng.uniform(0, 1, size=(n, n))
            D = (raw + raw.T) / 2
            np.fill_diagonal(D, 0.0)
            ids = _ids(n)
            part = over_partition(ids, D, delta=0.3, m_target=2)
            index = {cid: k for k, cid in enumerate(ids)}
            for cluster in part.clusters:
                rows = [index[c] for c in cluster]
                if len(rows) > 1:
                    assert D[np.ix_(rows, rows)].max() <= 0.3 + 1e-12

    def test_singleton_input(self):
        part = over_partition(["only"], np.zeros((1, 1)), delta=0.3, m_target=3)
        assert part.clusters == (("only",),)


class TestLlmRefine:
    def _base(self, ids):
        return Partition(clusters=tuple((i,) for i in ids), provenance="over_partition")

    def _entries(self, ids):
        return [(cid, f"def f_{cid}(): pass", 0.5) for cid in ids]

    def test_valid_merge_accepted(self):
        ids = ["a", "b"]
        llm = MockLlm([MockRule(response='{"groups": [{"id": 1, "members": ["a", "b"]}]}')])
        part = llm_refine_partition(self._base(ids), self._entries(ids), llm)
        assert part.provenance == "llm_refined"
        assert part.clusters == (("a", "b"),)

    def test_missing_candidate_falls_back(self):
        ids = ["a", "b", "c"]
        llm = MockLlm([MockRule(
            response='{"groups": [{"id": 1, "members": ["a", "b"]}]}'
        )])
        reasons = []
        part = llm_refine_partition(
            self._base(ids), self._entries(ids), llm, on_violation=reasons.append
        )
        assert part.provenance == "fallback"
        assert part.clusters == self._base(ids).clusters
        assert reasons and "not covered" in reasons[0]

    def test_duplicate_candidate_falls_back(self):
        ids = ["a", "b", "c"]
        llm = MockLlm([MockRule(
            response='{"groups": [{"id": 1, "members": ["a", "b", "c"]}, {"id": 2, "members": ["c"]}]}'
        )])
        part = llm_refine_partition(self._base(ids), self._entries(ids), llm)
        assert part.provenance == "fallback"

    def test_unparseable_reply_falls_back(self):
        ids = ["a", "b"]
        llm = MockLlm([MockRule(response="I would group them by vibes.")])
        part = llm_refine_partition(self._base(ids), self._entries(ids), llm)
        assert part.provenance == "fallback"

    def test_empty_group_falls_back(self):
        ids = ["a", "b"]
        llm = MockLlm([MockRule(
            response='{"groups": [{"id": 1, "members": ["a", "b"]}, {"id": 2, "members": []}]}'
        )])
        part = llm_refine_partition(self._base(ids), self._entries(ids), llm)
        assert part.provenance == "fallback"

    def test_prompt_carries_roster(self):
        ids = ["a", "b"]
        captured = {}

        class Spy:
            tokens_used = 0

            def complete(self, messages):
                captured["prompt"] = messages[-1]["content"]
                return "{}"

        llm_refine_partition(self._base(ids), self._entries(ids), Spy())
        assert "Group candidates that likely have the same behavior" in captured["prompt"]
        assert '"id": "a"' in captured["prompt"]
        assert '"score": 0.5' in captured["prompt"]


class TestClusterEntropy:
    def test_uniform_three_clique(self):
        value = cluster_entropy(["a", "b", "c"], lambda x, y: 0.4)
        assert value == pytest.approx(math.log(3), abs=1e-9)

    def test_singleton_is_zero(self):
        assert cluster_entropy(["a"], lambda x, y: 1.0) == 0.0

    def test_all_zero_similarity_is_zero(self):
        assert cluster_entropy(["a", "b", "c"], lambda x, y: 0.0) == 0.0

    def test_mixed_similarities(self):
        sims = {
            frozenset(("a", "b")): 0.2,
            frozenset(("a", "c")): 0.3,
            frozenset(("b", "c")): 0.5,
        }
        expected = -(0.2 * math.log(0.2) + 0.3 * math.log(0.3) + 0.5 * math.log(0.5))
        value = cluster_entropy(["a", "b", "c"], lambda x, y: sims[frozenset((x, y))])
        assert value == pytest.approx(expected, abs=1e-12)


class TestAllocation:
    def test_worked_example(self):
        assert entropy_weighted_allocation([1.0, 3.0], [5, 9], 10) == [3, 7]

    def test_equal_entropies_split_evenly(self):
        assert entropy_weighted_allocation([2.0, 2.0], [4, 4], 4) == [2, 2]

    def test_all_zero_entropies_fall_back_to_uniform(self):
        assert entropy_weighted_allocation([0.0, 0.0], [4, 4], 4) == [2, 2]

    def test_caps_and_redistributes(self):
        alloc = entropy_weighted_allocation([10.0, 1.0], [2, 8], 8)
        assert alloc[0] == 2
        assert sum(alloc) == 8

    def test_totals_min_of_target_and_population(self):
        rng = np.random.default_rng(9)
        for _ in range(300):
            k = int(rng.integers(1, 6))
            entropies = list(rng.uniform(0, 3, size=k) * rng.integers(0, 2, size=k))
            sizes = [int(s) for s in rng.integers(1, 7, size=k)]
            target = int(rng.integers(1, 14))
            alloc = entropy_weighted_allocation(entropies, sizes, target)
            assert all(a >= 0 for a in alloc)
            assert all(a <= s for a, s in zip(alloc, sizes))
            assert sum(alloc) == min(target, sum(sizes))

    def test_weights_sum_to_one(self):
        entropies = [0.7, 0.0, 2.4]
        total = sum(entropies)
        weights = [h / total for h in entropies]
        assert sum(weights) == pytest.approx(1.0, abs=1e-12)


class TestHeterogeneousGroup:
    def test_single_cluster_takes_all(self):
        group = heterogeneous_group([["a", "b", "c", "d", "e"]], [1.0], 4, seed=3)
        assert len(group.members) == 4
        assert group.kind == "heterogeneous"

    def test_single_small_cluster_capped(self):
        group = heterogeneous_group([["a", "b"]], [1.0], 4, seed=3)
        assert sorted(group.members) == ["a", "b"]

    def test_deterministic_given_seed(self):
        clusters = [["a", "b", "c"], ["d", "e", "f"]]
        g1 = heterogeneous_group(clusters, [1.0, 3.0], 4, seed=11)
        g2 = heterogeneous_group(clusters, [1.0, 3.0], 4, seed=11)
        assert g1 == g2

    def test_draws_from_two_clusters_when_possible(self):
        # all entropy mass on cluster 0, but cluster 1 is non-degenerate
        clusters = [["a", "b", "c", "d"], ["e", "f"]]
        group = heterogeneous_group(clusters, [5.0, 0.0], 4, seed=2)
        assert len(set(group.source_clusters)) >= 2

    def test_members_unique(self):
        clusters = [["a", "b", "c"], ["d", "e"]]
        group = heterogeneous_group(clusters, [1.0, 1.0], 5, seed=8)
        assert len(group.members) == len(set(group.members))


class TestBuildReflectionGroups:
    def _sim(self, a, b):
        return 0.5

    def test_three_clusters_one_crossover(self):
        part = Partition(
            clusters=(("a", "b"), ("c", "d"), ("e", "f")), provenance="over_partition"
        )
        fitness_of = {cid: i * 0.1 for i, cid in enumerate("abcdef")}
        groups = build_reflection_groups(part, fitness_of, self._sim, 4, 1, seed=0)
        assert len(groups) == 4
        assert [g.kind for g in groups] == ["homogeneous"] * 3 + ["heterogeneous"]

    def test_homogeneous_cap_keeps_best(self):
        part = Partition(clusters=(tuple("abcdefg"),), provenance="over_partition")
        fitness_of = {cid: i * 1.0 for i, cid in enumerate("abcdefg")}
        groups = build_reflection_groups(part, fitness_of, self._sim, 4, 1, seed=0)
        homogeneous = groups[0]
        assert homogeneous.members == ("a", "b", "c", "d")

    def test_single_candidate_degenerate(self):
        part = Partition(clusters=(("a",),), provenance="over_partition")
        groups = build_reflection_groups(part, {"a": 0.1}, self._sim, 4, 1, seed=0)
        assert len(groups) == 1
        assert groups[0].members == ("a",)
        assert groups[0].kind == "homogeneous"
