"""The generation loop: initialize, evaluate, group, reflect, select.

Selection is elitist over the union of the previous population and every
candidate produced in the generation's sessions, so the best fitness in the
population never regresses. The returned winner is the global argmin over
everything ever evaluated, not merely the final population's best.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import grouping as grouping_mod
from .core import (
    BuiltinBody,
    CandidateBody,
    FitnessRecord,
    GuestBody,
    HeuristicCandidate,
    Origin,
    Population,
    RunConfig,
    Verdict,
    derive_seed,
    make_candidate,
)
from .evaluators import (
    Instance,
    fitness,
    generate_bpp_instances,
    generate_tsp_instances,
)
from .executor import (
    ExecutorFactory,
    body_from_source,
    candidate_source,
    registered_builtins,
)
from .llm import HttpLlm, LlmClient, MockLlm
from .prompts import EXPLORE_TEMPLATE, task_prompt
from .reflection import CandidateParseError, parse_candidate, run_session
from .runlog import RunLogger
from .similarity import GroupingUnavailable, build_matrices


class InitializationError(RuntimeError):
    pass


@dataclass
class GenerationReport:
    generation: int
    population: list[tuple[str, float]]
    groups: list[dict]
    produced: list[dict]
    selected_ids: list[str]
    dropped_ids: list[str]
    best_fitness: float
    degraded_grouping: bool = False


@dataclass
class RunResult:
    best_candidate: HeuristicCandidate
    best_record: FitnessRecord
    reports: list[GenerationReport]
    population: Population


@dataclass
class _Archive:
    """Everything ever evaluated in this run, keyed by candidate id."""

    records: dict[str, FitnessRecord] = field(default_factory=dict)
    candidates: dict[str, HeuristicCandidate] = field(default_factory=dict)

    def add(self, candidate: HeuristicCandidate, record: FitnessRecord) -> None:
        self.candidates.setdefault(candidate.id, candidate)
        self.records.setdefault(candidate.id, record)

    def best(self) -> tuple[HeuristicCandidate, FitnessRecord]:
        best_id = min(
            self.records,
            key=lambda cid: (
                self.records[cid].fitness,
                self.candidates[cid].generation_created,
                cid,
            ),
        )
        return self.candidates[best_id], self.records[best_id]


def _evaluate(
    candidate: HeuristicCandidate,
    factory: ExecutorFactory,
    instances: Sequence[Instance],
    archive: _Archive,
    log: Optional[RunLogger],
) -> FitnessRecord:
    cached = archive.records.get(candidate.id)
    if cached is not None:
        archive.candidates.setdefault(candidate.id, candidate)
        return cached
    record = fitness(candidate, factory, instances)
    archive.add(candidate, record)
    if log is not None:
        log.emit(
            "candidate_evaluated",
            candidate_id=candidate.id,
            fitness=record.fitness,
            origin=candidate.origin.value,
            session=None,
        )
    return record


def initialize_population(
    config: RunConfig,
    llm: LlmClient,
    factory: ExecutorFactory,
    instances: Sequence[Instance],
    archive: Optional[_Archive] = None,
    log: Optional[RunLogger] = None,
) -> Population:
    """Ask the model for N distinct candidates, padding with builtins.

    Each request carries the problem task prompt plus the act-format
    instructions; duplicate and unparseable replies are dropped and retried,
    and any shortfall is filled from the builtin registry so a run can start
    with no usable model at all.
    """
    archive = archive if archive is not None else _Archive()
    target = config.num_candidates_to_initialize
    prompt = task_prompt(config.problem) + "\n\n" + EXPLORE_TEMPLATE
    members: dict[str, HeuristicCandidate] = {}
    attempts = 0
    while len(members) < target and attempts < 3 * target:
        attempts += 1
        reply = llm.complete([{"role": "user", "content": prompt}])
        try:
            note, code = parse_candidate(reply, "explore")
        except CandidateParseError:
            continue
        try:
            body = body_from_source(code, config.problem)
            candidate = make_candidate(body, Origin.INIT, algorithm_note=note)
        except ValueError:
            continue
        members.setdefault(candidate.id, candidate)
    for spec in registered_builtins(config.problem):
        if len(members) >= target:
            break
        candidate = make_candidate(BuiltinBody(spec.name), Origin.INIT)
        members.setdefault(candidate.id, candidate)
    if not members:
        raise InitializationError(
            "no valid initial candidates and no applicable builtins"
        )
    evaluated = [
        (cand, _evaluate(cand, factory, instances, archive, log))
        for cand in members.values()
    ]
    return Population(members=evaluated, generation=0)


def _grouping_pipeline(
    population: Population,
    config: RunConfig,
    llm: LlmClient,
    generation: int,
    log: Optional[RunLogger],
):
    """Similarity -> over-partition -> LLM refinement -> reflection groups.

    Returns (groups, partition, degraded). Any structural failure degrades
    to a single session over the whole population.
    """
    ok_members = [(c, r) for c, r in population.members if r.ok]
    if len(ok_members) < 2:
        return None
    try:
        sm = build_matrices(population.members, config.alpha, config.beta)
    except GroupingUnavailable:
        return None
    ids = sm.candidate_ids
    m_target = min(len(ids), 2 * config.num_clusters)
    partition = grouping_mod.over_partition(
        ids, sm.dissimilarity, grouping_mod.DEFAULT_DIAMETER, m_target
    )
    by_id = {c.id: (c, r) for c, r in population.members}
    entries = [
        (cid, candidate_source(by_id[cid][0].body), by_id[cid][1].fitness)
        for cid in ids
    ]
    violations: list[str] = []
    partition = grouping_mod.llm_refine_partition(
        partition, entries, llm, on_violation=violations.append
    )
    if log is not None:
        log.emit(
            "partition",
            generation=generation,
            provenance=partition.provenance,
            clusters=[list(c) for c in partition.clusters],
            violations=violations,
        )
    index = {cid: k for k, cid in enumerate(ids)}

    def sim(a: str, b: str) -> float:
        return float(sm.normalized[index[a], index[b]])

    fitness_of = {cid: by_id[cid][1].fitness for cid in ids}
    groups = grouping_mod.build_reflection_groups(
        partition,
        fitness_of,
        sim,
        config.num_elements,
        config.groups_per_crossover,
        seed=derive_seed(config.seed, "groups", generation),
    )
    return groups, partition


def step_generation(
    population: Population,
    config: RunConfig,
    llm: LlmClient,
    factory: ExecutorFactory,
    instances: Sequence[Instance],
    generation: int,
    archive: Optional[_Archive] = None,
    log: Optional[RunLogger] = None,
) -> tuple[Population, GenerationReport]:
    """One full generation of the evolutionary loop."""
    archive = archive if archive is not None else _Archive()
    for cand, rec in population.members:
        archive.add(cand, rec)
    by_id = {c.id: (c, r) for c, r in population.members}

    pipeline = _grouping_pipeline(population, config, llm, generation, log)
    degraded = pipeline is None
    if degraded:
        groups = [
            grouping_mod.ReflectionGroup(
                members=tuple(c.id for c, _ in population.members),
                kind="homogeneous",
            )
        ]
        if log is not None:
            log.emit(
                "partition",
                generation=generation,
                provenance="fallback",
                clusters=[[c.id for c, _ in population.members]],
                violations=["grouping degraded: similarity unavailable"],
            )
    else:
        groups, _ = pipeline

    population_best = min(r.fitness for _, r in population.members)
    new_candidates: dict[str, tuple[HeuristicCandidate, FitnessRecord]] = {}
    produced_rows: list[dict] = []
    for gi, group in enumerate(groups):
        session_members = [by_id[cid] for cid in group.members]
        session_id = f"g{generation}-s{gi}"
        produced, _, outcomes = run_session(
            session_members,
            population_best,
            config,
            llm,
            factory,
            instances,
            session_id=session_id,
            seed=derive_seed(config.seed, "session", generation, gi),
            generation=generation,
            group_kind=group.kind,
            cache=archive.records,
            log=log,
        )
        for turn, outcome in enumerate(outcomes):
            if outcome.candidate is None:
                continue
            produced_rows.append(
                {
                    "group": gi,
                    "turn": turn,
                    "candidate_id": outcome.candidate.id,
                    "decision": outcome.decision,
                    "fitness": outcome.record.fitness,
                }
            )
        for cand, rec in produced:
            archive.add(cand, rec)
            if cand.id not in by_id:
                new_candidates.setdefault(cand.id, (cand, rec))

    pool = dict(by_id)
    pool.update(new_candidates)
    ranked = sorted(
        pool.values(),
        key=lambda cr: (cr[1].fitness, cr[0].generation_created, cr[0].id),
    )
    selected = ranked[: config.top_k]
    selected_ids = [c.id for c, _ in selected]
    dropped_ids = [c.id for c, _ in ranked[config.top_k:]]
    next_population = Population(members=selected, generation=population.generation + 1)
    if log is not None:
        log.emit(
            "selection",
            generation=generation,
            selected=selected_ids,
            dropped=dropped_ids,
        )

    best_fitness = archive.best()[1].fitness
    report = GenerationReport(
        generation=generation,
        population=[(c.id, r.fitness) for c, r in next_population.members],
        groups=[
            {"kind": g.kind, "members": list(g.members), "source_clusters": list(g.source_clusters)}
            for g in groups
        ],
        produced=produced_rows,
        selected_ids=selected_ids,
        dropped_ids=dropped_ids,
        best_fitness=best_fitness,
        degraded_grouping=degraded,
    )
    return next_population, report


def _body_to_dict(body: CandidateBody) -> dict:
    if isinstance(body, BuiltinBody):
        return {"kind": "builtin", "name": body.name, "params": dict(body.params)}
    return {"kind": "guest", "source": body.source}


def _body_from_dict(doc: dict) -> CandidateBody:
    if doc["kind"] == "builtin":
        return BuiltinBody(doc["name"], doc.get("params", {}))
    return GuestBody(doc["source"])


def _member_to_dict(candidate: HeuristicCandidate, record: FitnessRecord) -> dict:
    return {
        "body": _body_to_dict(candidate.body),
        "origin": candidate.origin.value,
        "parent_ids": list(candidate.parent_ids),
        "generation_created": candidate.generation_created,
        "algorithm_note": candidate.algorithm_note,
        "per_instance_costs": list(record.per_instance_costs),
        "verdicts": [v.value for v in record.verdicts],
        "fitness": record.fitness,
    }


def _member_from_dict(doc: dict) -> tuple[HeuristicCandidate, FitnessRecord]:
    candidate = make_candidate(
        _body_from_dict(doc["body"]),
        Origin(doc["origin"]),
        parent_ids=doc["parent_ids"],
        generation_created=doc["generation_created"],
        algorithm_note=doc.get("algorithm_note", ""),
    )
    record = FitnessRecord(
        candidate_id=candidate.id,
        per_instance_costs=tuple(doc["per_instance_costs"]),
        verdicts=tuple(Verdict(v) for v in doc["verdicts"]),
        fitness=doc["fitness"],
    )
    return candidate, record


def save_checkpoint(
    path: str,
    population: Population,
    generation: int,
    config: RunConfig,
    best: tuple[HeuristicCandidate, FitnessRecord],
) -> None:
    """Write a resumable snapshot: population, global best, seeds, generation."""
    doc = {
        "generation": generation,
        "seed": config.seed,
        "instance_seed": config.instance_seed,
        "problem": config.problem,
        "population": [_member_to_dict(c, r) for c, r in population.members],
        "best": _member_to_dict(*best),
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    os.replace(tmp, path)


def load_checkpoint(path: str, config: RunConfig) -> tuple[Population, int, tuple]:
    """Restore a snapshot; the run it came from must match this config's seeds."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("seed", "instance_seed", "problem"):
        if doc.get(key) != getattr(config, key):
            raise ValueError(
                f"checkpoint {key} {doc.get(key)!r} does not match config "
                f"{getattr(config, key)!r}"
            )
    members = [_member_from_dict(m) for m in doc["population"]]
    population = Population(members=members, generation=doc["generation"])
    best = _member_from_dict(doc["best"])
    return population, int(doc["generation"]), best


def make_instances(config: RunConfig) -> list[Instance]:
    if config.problem == "tsp":
        return generate_tsp_instances(
            config.tsp_nodes, config.instance_count, config.instance_seed
        )
    return generate_bpp_instances(
        config.bpp_num_items,
        config.bpp_capacity,
        config.instance_count,
        config.instance_seed,
    )


def make_llm(config: RunConfig) -> LlmClient:
    if config.llm_backend == "http":
        return HttpLlm(
            base_url=config.llm_base_url,
            model=config.llm_model,
            api_key_env=config.llm_api_key_env,
            temperature=config.llm_temperature if config.llm_temperature >= 0 else None,
        )
    if config.llm_script:
        return MockLlm.from_file(config.llm_script)
    return MockLlm([])


def run(
    config: RunConfig,
    llm: Optional[LlmClient] = None,
    log: Optional[RunLogger] = None,
    instances: Optional[Sequence[Instance]] = None,
    runner_cmd: Optional[Sequence[str]] = None,
    checkpoint_path: Optional[str] = None,
) -> RunResult:
    """Execute the full evolutionary run and return the global best candidate.

    With a checkpoint path, a snapshot is written after every generation and
    an existing snapshot for the same seeds resumes the run from the
    generation it recorded.
    """
    llm = llm if llm is not None else make_llm(config)
    if instances is None:
        instances = make_instances(config)
    if runner_cmd is None and config.guest_runner_cmd:
        runner_cmd = config.guest_runner_cmd.split()
    factory = ExecutorFactory(
        problem=config.problem,
        timeout=config.timeout_seconds,
        runner_cmd=runner_cmd,
    )
    archive = _Archive()
    if log is not None:
        log.emit("run_start", config=vars(config) | {}, epochs=config.epochs)
        log.emit(
            "instance_set",
            problem=config.problem,
            count=len(instances),
            seed=config.instance_seed,
        )
    start_generation = 1
    if checkpoint_path is not None and os.path.exists(checkpoint_path):
        population, done_generation, best = load_checkpoint(checkpoint_path, config)
        for cand, rec in population.members:
            archive.add(cand, rec)
        archive.add(*best)
        start_generation = done_generation + 1
    else:
        population = initialize_population(config, llm, factory, instances, archive, log)
    reports: list[GenerationReport] = []
    for generation in range(start_generation, config.epochs + 1):
        population, report = step_generation(
            population, config, llm, factory, instances, generation, archive, log
        )
        reports.append(report)
        if log is not None:
            log.emit(
                "generation_summary",
                generation=generation,
                best_fitness=report.best_fitness,
                population=[cid for cid, _ in report.population],
                tokens_used=llm.tokens_used,
            )
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, population, generation, config, archive.best())
    best_candidate, best_record = archive.best()
    if log is not None:
        log.emit(
            "run_end",
            best_candidate=best_candidate.id,
            best_fitness=best_record.fitness,
        )
    return RunResult(
        best_candidate=best_candidate,
        best_record=best_record,
        reports=reports,
        population=population,
    )
