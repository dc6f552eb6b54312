"""Shared helpers for the test suite: scripted mock clients and tiny builders."""
from __future__ import annotations

import pytest

from evoheur import (
    BuiltinBody,
    ExecutorFactory,
    MockLlm,
    Origin,
    Verdict,
    make_candidate,
)
from evoheur.core import make_fitness_record


def record_for(candidate, costs, verdicts=None):
    verdicts = verdicts or [Verdict.OK] * len(costs)
    return make_fitness_record(candidate.id, costs, verdicts)


def builtin_candidate(name, params=None, origin=Origin.INIT):
    return make_candidate(BuiltinBody(name, params or {}), origin)


def explore_block(code, note="seeded heuristic"):
    return f"<explore>\n<algorithm>{note}</algorithm>\n<code>\n{code}\n</code>\n</explore>"


def exploit_block(code, note="refinement"):
    return f"<exploit>\n<algorithm>{note}</algorithm>\n<code>\n{code}\n</code>\n</exploit>"


INIT_MARKERS = (
    "# builtin: first_fit",
    "# builtin: worst_fit",
    '# builtin: weighted_fit {"residual_weight": 0.5, "index_weight": 0.5}',
    '# builtin: weighted_fit {"residual_weight": 0.2, "index_weight": 1.0}',
    '# builtin: weighted_fit {"residual_weight": 0.0, "index_weight": 1.0}',
    '# builtin: weighted_fit {"residual_weight": 1.0, "index_weight": 5.0}',
)


def mock_script_rules(filler_exploits=0, improving="# builtin: best_fit"):
    """Script for a three-generation mock run over six distinct candidates.

    The first `filler_exploits` exploit acts re-submit an existing candidate;
    afterwards every exploit act proposes the improving one. Measuring the
    first generation's act count and passing it as `filler_exploits` places
    the improvement exactly at the second generation.
    """
    rules = [
        {"match": "exactly one <explore> block", "response": explore_block(marker)}
        for marker in INIT_MARKERS
    ]
    rules.append({
        "match": "Group candidates that likely have the same behavior",
        "response": "{}",
        "repeat": True,
    })
    rules.append({
        "match": "LOWER fitness score = BETTER",
        "response": "residual packing looks strongest; refine it <exploit>",
        "repeat": True,
    })
    for _ in range(filler_exploits):
        rules.append({
            "match": "exactly one <exploit> block",
            "response": exploit_block("# builtin: first_fit"),
        })
    rules.append({
        "match": "exactly one <exploit> block",
        "response": exploit_block(improving, note="tightest-fit placement"),
        "repeat": True,
    })
    return rules


@pytest.fixture
def bpp_factory():
    return ExecutorFactory(problem="bpp", timeout=10.0)


@pytest.fixture
def tsp_factory():
    return ExecutorFactory(problem="tsp", timeout=10.0)


class CountingLlm:
    """Wraps a MockLlm and records every prompt, for call bookkeeping."""

    def __init__(self, inner: MockLlm):
        self.inner = inner
        self.prompts: list[str] = []

    @property
    def tokens_used(self):
        return self.inner.tokens_used

    def complete(self, messages):
        self.prompts.append(messages[-1]["content"])
        return self.inner.complete(messages)
