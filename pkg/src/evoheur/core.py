"""Shared domain types, candidate identity, and run-configuration handling.

Everything here is an immutable value object: candidates, fitness records and
configs may be freely shared across threads.
"""
from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Any, Mapping, Optional, Sequence, Union

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

# Fitness assigned to any candidate whose evaluation failed on at least one
# instance. Strictly worse than any feasible objective at benchmark scales.
PENALTY_FITNESS = 1.0e9


class Origin(str, Enum):
    INIT = "init"
    EXPLORE = "explore"
    EXPLOIT = "exploit"
    REFINEMENT = "refinement"


class Verdict(str, Enum):
    OK = "ok"
    TIMEOUT = "timeout"
    CRASH = "crash"
    MALFORMED_OUTPUT = "malformed_output"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class BuiltinBody:
    """Reference to a registered native heuristic, e.g. first_fit."""

    name: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("builtin name must be non-empty")
        object.__setattr__(self, "params", dict(self.params))


@dataclass(frozen=True)
class GuestBody:
    """Candidate source text executed by the guest runner."""

    source: str

    def __post_init__(self) -> None:
        if not self.source.strip():
            raise ValueError("guest source must be non-empty")


CandidateBody = Union[BuiltinBody, GuestBody]


def normalize_source(source: str) -> str:
    """Normalize line endings and strip trailing whitespace per line."""
    unified = source.replace("\r\n", "\n").replace("\r", "\n")
    return "\n".join(line.rstrip() for line in unified.split("\n"))


def candidate_key(body: CandidateBody) -> str:
    """Deterministic 128-bit content hash of a candidate body.

    Guest sources are whitespace-normalized first so cosmetically identical
    sources collide; builtin keys cover the name and the sorted params.
    """
    if isinstance(body, BuiltinBody):
        payload = "builtin\x00" + body.name + "\x00" + json.dumps(
            body.params, sort_keys=True, separators=(",", ":")
        )
    elif isinstance(body, GuestBody):
        payload = "guest\x00" + normalize_source(body.source)
    else:
        raise TypeError(f"not a candidate body: {body!r}")
    return hashlib.blake2b(payload.encode("utf-8"), digest_size=16).hexdigest()


@dataclass(frozen=True)
class HeuristicCandidate:
    id: str
    body: CandidateBody
    origin: Origin
    parent_ids: tuple[str, ...] = ()
    generation_created: int = 0
    algorithm_note: str = ""


def make_candidate(
    body: CandidateBody,
    origin: Origin,
    parent_ids: Sequence[str] = (),
    generation_created: int = 0,
    algorithm_note: str = "",
) -> HeuristicCandidate:
    """Build a candidate with a content-derived id.

    parent_ids must be empty exactly when origin is INIT.
    """
    origin = Origin(origin)
    parents = tuple(parent_ids)
    if (origin is Origin.INIT) != (len(parents) == 0):
        raise ValueError(
            f"origin {origin.value} inconsistent with {len(parents)} parents"
        )
    if generation_created < 0:
        raise ValueError("generation_created must be >= 0")
    return HeuristicCandidate(
        id=candidate_key(body),
        body=body,
        origin=origin,
        parent_ids=parents,
        generation_created=generation_created,
        algorithm_note=algorithm_note,
    )


@dataclass(frozen=True)
class FitnessRecord:
    """Per-instance objective values and the aggregate fitness (lower = better)."""

    candidate_id: str
    per_instance_costs: tuple[float, ...]
    verdicts: tuple[Verdict, ...]
    fitness: float

    @property
    def ok(self) -> bool:
        return all(v is Verdict.OK for v in self.verdicts)


def make_fitness_record(
    candidate_id: str,
    per_instance_costs: Sequence[float],
    verdicts: Sequence[Verdict],
) -> FitnessRecord:
    """Aggregate per-instance costs; any non-ok verdict forces the penalty fitness."""
    costs = tuple(float(c) for c in per_instance_costs)
    verds = tuple(Verdict(v) for v in verdicts)
    if len(costs) != len(verds) or not costs:
        raise ValueError("need one cost and one verdict per instance")
    if all(v is Verdict.OK for v in verds):
        fitness = math.fsum(costs) / len(costs)
    else:
        fitness = PENALTY_FITNESS
    return FitnessRecord(candidate_id, costs, verds, fitness)


@dataclass
class Population:
    members: list[tuple[HeuristicCandidate, FitnessRecord]]
    generation: int = 0

    def __post_init__(self) -> None:
        ids = [c.id for c, _ in self.members]
        if len(ids) != len(set(ids)):
            raise ValueError("population members must have distinct ids")
        for cand, rec in self.members:
            if cand.id != rec.candidate_id:
                raise ValueError(f"record/candidate id mismatch for {cand.id}")

    def best(self) -> tuple[HeuristicCandidate, FitnessRecord]:
        return min(self.members, key=lambda m: (m[1].fitness, m[0].generation_created, m[0].id))


PROBLEMS = ("bpp", "tsp")
LLM_BACKENDS = ("mock", "http")


@dataclass(frozen=True)
class RunConfig:
    # evolution loop
    max_turns: int = 6
    num_candidates_to_initialize: int = 10
    epochs: int = 20
    top_k: int = 10
    reminder_probability: float = 0.3
    # clustering & cross-over
    num_clusters: int = 3
    num_elements: int = 4
    alpha: float = 0.5
    beta: float = 0.5
    groups_per_crossover: int = 1
    # evaluator
    timeout_seconds: float = 70.0
    # problem and instance set
    problem: str = "bpp"
    instance_count: int = 5
    instance_seed: int = 2024
    bpp_num_items: int = 1000
    bpp_capacity: int = 100
    tsp_nodes: int = 50
    # engine seed and backends
    seed: int = 0
    llm_backend: str = "mock"
    llm_script: str = ""
    llm_base_url: str = ""
    llm_model: str = ""
    llm_api_key_env: str = "EVOHEUR_API_KEY"
    llm_temperature: float = -1.0  # negative = backend default
    guest_runner_cmd: str = ""


class ConfigError(ValueError):
    """Raised with one message per violated config field."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


_COUNT_FIELDS = (
    "max_turns",
    "num_candidates_to_initialize",
    "epochs",
    "top_k",
    "num_clusters",
    "num_elements",
    "groups_per_crossover",
    "instance_count",
    "bpp_num_items",
)


def validate_config(raw: Mapping[str, Any]) -> RunConfig:
    """Normalize a raw key/value mapping into a RunConfig.

    Unset fields take their defaults; beta defaults to 1 - alpha so the
    single-knob alpha tuning keeps the two similarity coefficients summing
    to one, while both stay independently settable.
    """
    errors: list[str] = []
    known = {f.name: f for f in fields(RunConfig)}
    values: dict[str, Any] = {}

    for key, value in raw.items():
        if key not in known:
            errors.append(f"{key}: unknown config field")
            continue
        expected = known[key].type
        if expected == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                errors.append(f"{key}: expected an integer, got {value!r}")
                continue
        elif expected == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                errors.append(f"{key}: expected a number, got {value!r}")
                continue
            value = float(value)
        elif expected == "str" and not isinstance(value, str):
            errors.append(f"{key}: expected a string, got {value!r}")
            continue
        values[key] = value

    if "alpha" in values and "beta" not in values:
        alpha = values["alpha"]
        if isinstance(alpha, float) and alpha <= 1.0:
            values["beta"] = 1.0 - alpha

    cfg = replace(RunConfig(), **values)

    for name in _COUNT_FIELDS:
        if getattr(cfg, name) < 1:
            errors.append(f"{name}: must be >= 1")
    if cfg.bpp_capacity < 2:
        errors.append("bpp_capacity: must be >= 2")
    if cfg.tsp_nodes < 3:
        errors.append("tsp_nodes: must be >= 3")
    if cfg.alpha < 0:
        errors.append("alpha: must be >= 0")
    if cfg.beta < 0:
        errors.append("beta: must be >= 0")
    if cfg.alpha == 0 and cfg.beta == 0:
        errors.append("alpha/beta: alpha + beta must be > 0")
    if not 0.0 <= cfg.reminder_probability <= 1.0:
        errors.append("reminder_probability: must be in [0, 1]")
    if cfg.top_k > cfg.num_candidates_to_initialize + 1:
        errors.append("top_k: must be <= num_candidates_to_initialize + 1")
    if cfg.timeout_seconds <= 0:
        errors.append("timeout_seconds: must be > 0")
    if cfg.problem not in PROBLEMS:
        errors.append(f"problem: must be one of {PROBLEMS}")
    if cfg.llm_backend not in LLM_BACKENDS:
        errors.append(f"llm_backend: must be one of {LLM_BACKENDS}")
    if cfg.seed < 0 or cfg.instance_seed < 0:
        errors.append("seed/instance_seed: must be >= 0")

    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path: str, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Load a flat TOML config file and apply overrides on top."""
    with open(path, "rb") as fh:
        raw = _toml.load(fh)
    flat = dict(raw)
    if overrides:
        flat.update(overrides)
    return validate_config(flat)


def derive_seed(*parts: Any) -> int:
    """Stable 63-bit seed derived from arbitrary labelled parts."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1
