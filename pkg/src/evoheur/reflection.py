"""Multi-turn observe/reason/act sessions over one reflection group.

Each turn optionally injects a performance reminder, asks for a tagged
explore/exploit decision, requests exactly one candidate block, evaluates
it, and feeds the observation back into the transcript. Model misbehavior
never raises: bad decisions default to exploit after retries and bad
candidate blocks are dropped, both visibly logged.
"""
from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from . import prompts
from .core import (
    FitnessRecord,
    HeuristicCandidate,
    Origin,
    RunConfig,
    make_candidate,
)
from .evaluators import Instance, fitness
from .executor import BuiltinBody, ExecutorFactory, body_from_source
from .llm import LlmClient

_MAX_PARSE_RETRIES = 2

_DECISION_TAGS = ("explore", "exploit")

_DECISION_CORRECTION = (
    "Your previous reply did not contain exactly one decision tag. "
    "Reply again and end with either <explore> or <exploit>."
)
_CANDIDATE_CORRECTION = (
    "Your previous reply was not a single well-formed block. "
    "Output exactly one block in the requested format, containing both "
    "<algorithm> and <code>."
)


class DecisionParseError(ValueError):
    pass


class CandidateParseError(ValueError):
    pass


@dataclass
class TurnOutcome:
    decision: str
    candidate: Optional[HeuristicCandidate]
    record: Optional[FitnessRecord]
    reasoning_text: str = ""
    parse_status: str = "ok"  # ok | decision_defaulted | no_candidate
    reminder_injected: bool = False


@dataclass
class SessionState:
    session_id: str
    problem: str
    members: tuple[str, ...]
    group_kind: str
    records: dict[str, FitnessRecord]
    population_best: float
    transcript: list[dict] = field(default_factory=list)
    feedback: dict[str, tuple[HeuristicCandidate, FitnessRecord]] = field(default_factory=dict)
    turn_index: int = 0
    session_best: Optional[float] = None
    last_improvement: Optional[float] = None
    rng: random.Random = field(default_factory=random.Random)
    candidates_by_id: dict[str, HeuristicCandidate] = field(default_factory=dict)

    def append(self, role: str, tag: str, content: str) -> dict:
        message = {"role": role, "tag": tag, "content": content}
        self.transcript.append(message)
        return message

    def chat_messages(self) -> list[dict]:
        """Transcript as a strictly alternating user/assistant conversation.

        Consecutive engine messages (task prompt, reminder, think prompt)
        are merged into one user turn.
        """
        merged: list[dict] = []
        for m in self.transcript:
            role = "user" if m["role"] == "engine" else "assistant"
            if merged and merged[-1]["role"] == role:
                merged[-1]["content"] += "\n\n" + m["content"]
            else:
                merged.append({"role": role, "content": m["content"]})
        return merged


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def summarize_candidate(candidate: HeuristicCandidate) -> str:
    if isinstance(candidate.body, BuiltinBody):
        params = candidate.body.params
        suffix = f" {params}" if params else ""
        return f"builtin {candidate.body.name}{suffix}"
    note = candidate.algorithm_note.strip().splitlines()
    if note:
        return note[0][:120]
    head = candidate.body.source.strip().splitlines()
    return (head[0][:120] if head else "guest candidate")


def init_feedback(
    members: Sequence[tuple[HeuristicCandidate, FitnessRecord]],
    population_best: float,
    problem: str,
    session_id: str,
    seed: int,
    group_kind: str = "homogeneous",
) -> SessionState:
    """Seed a session with the task prompt and group diagnostics.

    Every member must arrive with its fitness record; diagnostics carry the
    per-member fitness, the group summary statistics and each member's gap
    to the group best.
    """
    if not members:
        raise ValueError("a session needs at least one group member")
    for cand, rec in members:
        if rec is None or rec.candidate_id != cand.id:
            raise ValueError(f"member {cand.id} lacks a fitness record")
    state = SessionState(
        session_id=session_id,
        problem=problem,
        members=tuple(c.id for c, _ in members),
        group_kind=group_kind,
        records={c.id: r for c, r in members},
        population_best=population_best,
        rng=random.Random(seed),
        candidates_by_id={c.id: c for c, _ in members},
    )
    state.append("engine", "task", prompts.task_prompt(problem))
    return state


def _diagnostics_block(state: SessionState) -> str:
    fits = [state.records[cid].fitness for cid in state.members]
    group_best = min(fits)
    lines = [
        "GROUP REFLECTION",
        f"Group kind: {state.group_kind}",
        "Members (fitness, delta vs group best):",
    ]
    for cid in state.members:
        f = state.records[cid].fitness
        summary = summarize_candidate(state.candidates_by_id[cid])
        lines.append(
            f"- {cid[:12]} fitness={_fmt(f)} delta={_fmt(f - group_best)} ({summary})"
        )
    lines.append(
        "Group fitness min/mean/max: "
        f"{_fmt(min(fits))} / {_fmt(sum(fits) / len(fits))} / {_fmt(max(fits))}"
    )
    lines.append(f"Population best fitness: {_fmt(state.population_best)}")
    if state.session_best is not None:
        lines.append(f"Best fitness generated this session: {_fmt(state.session_best)}")
    if state.last_improvement is not None:
        lines.append(f"Improvement last turn: {_fmt(state.last_improvement)}")
    return "\n".join(lines)


def render_think_prompt(state: SessionState) -> str:
    return _diagnostics_block(state) + "\n\n" + prompts.THINK_TEMPLATE


def render_explore_prompt() -> str:
    return prompts.EXPLORE_TEMPLATE


def render_exploit_prompt(target_block: Optional[str] = None) -> str:
    if target_block is None:
        return prompts.EXPLOIT_TEMPLATE
    return target_block + "\n\n" + prompts.EXPLOIT_TEMPLATE


def parse_decision(text: str) -> str:
    """The single decision tag present in the reply; ambiguity is an error."""
    present = [tag for tag in _DECISION_TAGS if f"<{tag}>" in text]
    if len(present) != 1:
        raise DecisionParseError(
            f"expected exactly one of <explore>/<exploit>, found {present or 'none'}"
        )
    return present[0]


def _strip_code_fences(code: str) -> str:
    lines = code.strip("\n").split("\n")
    if lines and lines[0].lstrip().startswith("```"):
        lines = lines[1:]
    if lines and lines[-1].strip() == "```":
        lines = lines[:-1]
    return "\n".join(lines).strip("\n")


def parse_candidate(text: str, decision: str) -> tuple[str, str]:
    """Extract (algorithm_note, code) from the single tagged block."""
    if decision not in _DECISION_TAGS:
        raise ValueError(f"unknown decision: {decision!r}")
    blocks = re.findall(
        rf"<{decision}>(.*?)</{decision}>", text, flags=re.DOTALL
    )
    if len(blocks) != 1:
        raise CandidateParseError(
            f"expected exactly one <{decision}> block, found {len(blocks)}"
        )
    inner = blocks[0]
    algos = re.findall(r"<algorithm>(.*?)</algorithm>", inner, flags=re.DOTALL)
    codes = re.findall(r"<code>(.*?)</code>", inner, flags=re.DOTALL)
    if len(algos) != 1 or len(codes) != 1:
        raise CandidateParseError("block must contain one <algorithm> and one <code>")
    code = _strip_code_fences(codes[0])
    if not code.strip():
        raise CandidateParseError("empty <code> block")
    return algos[0].strip(), code


def _best_known(state: SessionState) -> Optional[tuple[HeuristicCandidate, FitnessRecord]]:
    pool: dict[str, tuple[HeuristicCandidate, FitnessRecord]] = {}
    for cid in state.members:
        pool[cid] = (state.candidates_by_id[cid], state.records[cid])
    pool.update(state.feedback)
    if not pool:
        return None
    return min(pool.values(), key=lambda cr: (cr[1].fitness, cr[0].id))


def _reminder_text(state: SessionState) -> str:
    best = _best_known(state)
    assert best is not None
    cand, rec = best
    return (
        "Reminder: lower fitness is better. The best known candidate so far "
        f"has fitness {_fmt(rec.fitness)} ({summarize_candidate(cand)}). "
        "Improvements are measured against it."
    )


def _exploit_target_block(state: SessionState) -> Optional[str]:
    best = _best_known(state)
    if best is None:
        return None
    cand, rec = best
    source = (
        cand.body.source
        if not isinstance(cand.body, BuiltinBody)
        else f"# builtin: {cand.body.name}"
    )
    return (
        "CANDIDATE TO REFINE\n"
        f"Best known candidate (fitness {_fmt(rec.fitness)}, "
        f"{summarize_candidate(cand)}):\n{source}"
    )


def _complete(state: SessionState, llm: LlmClient, tag: str) -> str:
    reply = llm.complete(state.chat_messages())
    state.append("model", tag, reply)
    return reply


def run_turn(
    state: SessionState,
    llm: LlmClient,
    factory: ExecutorFactory,
    instances: Sequence[Instance],
    config: RunConfig,
    generation: int = 0,
    cache: Optional[dict[str, FitnessRecord]] = None,
    log=None,
) -> TurnOutcome:
    """One observe -> reason -> act cycle; increments the turn index exactly once."""
    if state.turn_index >= config.max_turns:
        raise RuntimeError("turn budget exhausted")

    reminder_injected = False
    if state.rng.random() < config.reminder_probability:
        reminder_injected = True
        text = _reminder_text(state)
        state.append("engine", "reminder", text)
        if log is not None:
            log.emit("reminder", session=state.session_id, turn=state.turn_index)

    # reason: tagged decision, retried twice, then defaulting to exploit
    state.append("engine", "think", render_think_prompt(state))
    decision: Optional[str] = None
    parse_status = "ok"
    reasoning_text = ""
    for attempt in range(1 + _MAX_PARSE_RETRIES):
        reasoning_text = _complete(state, llm, "decision")
        try:
            decision = parse_decision(reasoning_text)
            break
        except DecisionParseError:
            if attempt < _MAX_PARSE_RETRIES:
                state.append("engine", "correction", _DECISION_CORRECTION)
    if decision is None:
        decision = "exploit"
        parse_status = "decision_defaulted"

    # act: exactly one candidate block, retried twice, else dropped
    if decision == "exploit":
        act_prompt = render_exploit_prompt(_exploit_target_block(state))
    else:
        act_prompt = render_explore_prompt()
    state.append("engine", "act", act_prompt)
    parsed: Optional[tuple[str, str]] = None
    for attempt in range(1 + _MAX_PARSE_RETRIES):
        reply = _complete(state, llm, "candidate_reply")
        try:
            parsed = parse_candidate(reply, decision)
            break
        except CandidateParseError:
            if attempt < _MAX_PARSE_RETRIES:
                state.append("engine", "correction", _CANDIDATE_CORRECTION)

    candidate: Optional[HeuristicCandidate] = None
    record: Optional[FitnessRecord] = None
    if parsed is None:
        parse_status = "no_candidate" if parse_status == "ok" else parse_status
    else:
        note, code = parsed
        body = body_from_source(code, state.problem)
        best = _best_known(state)
        if decision == "exploit" and best is not None:
            parents: tuple[str, ...] = (best[0].id,)
        else:
            parents = state.members
        candidate = make_candidate(
            body,
            origin=Origin(decision),
            parent_ids=parents,
            generation_created=generation,
            algorithm_note=note,
        )
        if cache is not None and candidate.id in cache:
            record = cache[candidate.id]
        else:
            record = fitness(candidate, factory, instances)
            if cache is not None:
                cache[candidate.id] = record
        if candidate.id not in state.feedback:
            state.feedback[candidate.id] = (candidate, record)
        state.candidates_by_id[candidate.id] = candidate
        previous_best = state.session_best
        if previous_best is None or record.fitness < previous_best:
            state.session_best = record.fitness
        state.last_improvement = (
            0.0 if previous_best is None else max(0.0, previous_best - record.fitness)
        )
        verdict_summary = ",".join(sorted({v.value for v in record.verdicts}))
        state.append(
            "engine",
            "observation",
            "<observation>\n"
            f"fitness: {_fmt(record.fitness)}\n"
            f"verdicts: {verdict_summary}\n"
            "</observation>",
        )
        if log is not None:
            log.emit(
                "candidate_evaluated",
                candidate_id=candidate.id,
                fitness=record.fitness,
                origin=candidate.origin.value,
                session=state.session_id,
            )

    state.turn_index += 1
    outcome = TurnOutcome(
        decision=decision,
        candidate=candidate,
        record=record,
        reasoning_text=reasoning_text,
        parse_status=parse_status,
        reminder_injected=reminder_injected,
    )
    if log is not None:
        log.emit(
            "turn",
            session=state.session_id,
            turn=state.turn_index - 1,
            decision=decision,
            parse_status=parse_status,
            reminder=reminder_injected,
            candidate_id=candidate.id if candidate else None,
            fitness=record.fitness if record else None,
        )
    return outcome


def run_session(
    members: Sequence[tuple[HeuristicCandidate, FitnessRecord]],
    population_best: float,
    config: RunConfig,
    llm: LlmClient,
    factory: ExecutorFactory,
    instances: Sequence[Instance],
    session_id: str,
    seed: int,
    generation: int = 0,
    group_kind: str = "homogeneous",
    cache: Optional[dict[str, FitnessRecord]] = None,
    log=None,
) -> tuple[list[tuple[HeuristicCandidate, FitnessRecord]], SessionState, list[TurnOutcome]]:
    """Run exactly max_turns turns and return every candidate evaluated in-session."""
    state = init_feedback(
        members, population_best, config.problem, session_id, seed, group_kind
    )
    outcomes = []
    for _ in range(config.max_turns):
        outcomes.append(
            run_turn(
                state, llm, factory, instances, config,
                generation=generation, cache=cache, log=log,
            )
        )
    produced = list(state.feedback.values())
    if log is not None:
        log.emit(
            "group",
            session=state.session_id,
            group_kind=group_kind,
            members=list(state.members),
            transcript=state.transcript,
        )
    return produced, state, outcomes
