"""Problem definitions, instance generation, candidate simulation and metrics.

Covers both benchmark problems: Euclidean TSP (constructive next-node
candidates) and online bin packing (bin-scoring candidates), plus the
classical baselines and the small exact oracles the test suite leans on.
"""
from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .core import (
    FitnessRecord,
    HeuristicCandidate,
    Verdict,
    make_fitness_record,
)
from .executor import (
    ExecutorFactory,
    ExecutorSession,
    HeuristicCallError,
    NextNodeCall,
    ScoreCall,
)


# --- instances ----------------------------------------------------------------

@dataclass(frozen=True)
class TspInstance:
    """Planar TSP instance; generated coordinates live in the unit square."""

    coords: np.ndarray
    reference_cost: Optional[float] = None
    rounded: bool = False  # nearest-integer metric used by TSPLib files

    def __post_init__(self) -> None:
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 2 or coords.shape[0] < 3:
            raise ValueError("a TSP instance needs at least 3 (x, y) points")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def n(self) -> int:
        return len(self.coords)


@dataclass(frozen=True)
class BppInstance:
    """Online bin packing instance; items are processed strictly in order."""

    capacity: int
    items: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("capacity must be a positive integer")
        items = tuple(int(s) for s in self.items)
        if not items:
            raise ValueError("instance needs at least one item")
        if any(s < 1 or s > self.capacity for s in items):
            raise ValueError("item sizes must be in [1, capacity]")
        object.__setattr__(self, "items", items)


Instance = Union[TspInstance, BppInstance]


@dataclass(frozen=True)
class EvalOutcome:
    verdict: Verdict
    cost: Optional[float] = None
    trace: Optional[tuple] = None
    detail: str = ""

    def __post_init__(self) -> None:
        if (self.verdict is Verdict.OK) != (self.cost is not None):
            raise ValueError("cost must be present exactly when verdict is ok")


# --- TSP geometry and baselines ------------------------------------------------

def distance_matrix(instance: TspInstance) -> np.ndarray:
    delta = instance.coords[:, None, :] - instance.coords[None, :, :]
    dist = np.sqrt((delta ** 2).sum(axis=2))
    if instance.rounded:
        dist = np.floor(dist + 0.5)
    return dist


def tour_length(perm: Sequence[int], instance: TspInstance) -> float:
    """Closed-tour length of a permutation of all nodes."""
    order = np.asarray(perm, dtype=int)
    n = instance.n
    if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
        raise ValueError("perm must be a permutation of 0..n-1")
    dist = distance_matrix(instance)
    return float(dist[order, np.roll(order, -1)].sum())


def nearest_neighbour(instance: TspInstance, start: int = 0) -> np.ndarray:
    """Greedy construction: always move to the closest unvisited node."""
    dist = distance_matrix(instance)
    n = instance.n
    unvisited = np.ones(n, dtype=bool)
    unvisited[start] = False
    tour = [start]
    for _ in range(n - 1):
        current = tour[-1]
        options = np.flatnonzero(unvisited)
        nxt = options[int(np.argmin(dist[current, options]))]
        unvisited[nxt] = False
        tour.append(int(nxt))
    return np.asarray(tour, dtype=int)


def two_opt(perm: Sequence[int], instance: TspInstance) -> np.ndarray:
    """First-improvement 2-opt passes until no improving swap exists."""
    dist = distance_matrix(instance)
    tour = list(np.asarray(perm, dtype=int))
    n = len(tour)
    if n != instance.n:
        raise ValueError("perm length must match the instance")
    improved = True
    while improved:
        improved = False
        for i in range(1, n - 1):
            for j in range(i + 1, n):
                a, b = tour[i - 1], tour[i]
                c, d = tour[j], tour[(j + 1) % n]
                if a == c or b == d:
                    continue
                delta = (dist[a, c] + dist[b, d]) - (dist[a, b] + dist[c, d])
                if delta < -1e-12:
                    tour[i:j + 1] = reversed(tour[i:j + 1])
                    improved = True
    return np.asarray(tour, dtype=int)


def brute_force_tsp(instance: TspInstance) -> tuple[tuple[int, ...], float]:
    """Exact optimum by exhaustive enumeration with the first node fixed."""
    n = instance.n
    if n > 10:
        raise ValueError(f"brute force refused for n={n} > 10")
    dist = distance_matrix(instance)
    best_perm: Optional[tuple[int, ...]] = None
    best_cost = math.inf
    for rest in itertools.permutations(range(1, n)):
        if rest[0] > rest[-1]:  # each tour direction enumerated once
            continue
        perm = (0,) + rest
        cost = 0.0
        prev = 0
        for node in rest:
            cost += dist[prev, node]
            prev = node
        cost += dist[prev, 0]
        if cost < best_cost:
            best_cost = cost
            best_perm = perm
    assert best_perm is not None
    return best_perm, float(best_cost)


def generate_tsp_instances(n: int, count: int, seed: int) -> list[TspInstance]:
    """Seeded instances with coordinates i.i.d. uniform on the unit square.

    The stored reference cost is the nearest-neighbour tour improved by
    2-opt, the engine's stand-in for an externally supplied best-known value.
    """
    if n < 3 or count < 1:
        raise ValueError("need n >= 3 and count >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        inst = TspInstance(coords=rng.random((n, 2)))
        ref = tour_length(two_opt(nearest_neighbour(inst, 0), inst), inst)
        out.append(TspInstance(coords=inst.coords, reference_cost=ref))
    return out


class TsplibParseError(ValueError):
    pass


def parse_tsplib(text: str) -> TspInstance:
    """Read a TSPLib file with a 2-D Euclidean node-coordinate section.

    Distances for these instances use the conventional nearest-integer
    rounding; the reference cost is left unset (supplied externally).
    """
    dimension: Optional[int] = None
    weight_type: Optional[str] = None
    coords: list[tuple[float, float]] = []
    in_coords = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line == "EOF":
            continue
        if in_coords:
            parts = line.split()
            if len(parts) == 1 and parts[0].isalpha():
                in_coords = False
            else:
                if len(parts) != 3:
                    raise TsplibParseError(
                        f"line {lineno}: expected 'index x y', got {line!r}"
                    )
                try:
                    coords.append((float(parts[1]), float(parts[2])))
                except ValueError:
                    raise TsplibParseError(
                        f"line {lineno}: malformed coordinate line {line!r}"
                    ) from None
                continue
        if ":" in line:
            key, _, value = line.partition(":")
            key, value = key.strip().upper(), value.strip()
            if key == "DIMENSION":
                dimension = int(value)
            elif key == "EDGE_WEIGHT_TYPE":
                weight_type = value.upper()
        elif line.upper() == "NODE_COORD_SECTION":
            in_coords = True
    if weight_type is not None and weight_type != "EUC_2D":
        raise TsplibParseError(f"unsupported edge-weight type: {weight_type}")
    if not coords:
        raise TsplibParseError("no node-coordinate section found")
    if dimension is not None and dimension != len(coords):
        raise TsplibParseError(
            f"dimension {dimension} does not match {len(coords)} coordinates"
        )
    return TspInstance(coords=np.asarray(coords), rounded=True)


# --- BPP simulation and oracles -------------------------------------------------

def generate_bpp_instances(
    num_items: int,
    capacity: int,
    count: int,
    seed: int,
    max_item_fraction: float = 0.6,
) -> list[BppInstance]:
    """Seeded instances with item sizes uniform on [1, floor(f * capacity)]."""
    if num_items < 1 or capacity < 2 or count < 1:
        raise ValueError("need num_items >= 1, capacity >= 2, count >= 1")
    top = max(1, int(max_item_fraction * capacity))
    rng = np.random.default_rng(seed)
    return [
        BppInstance(capacity, tuple(int(s) for s in rng.integers(1, top + 1, size=num_items)))
        for _ in range(count)
    ]


def bpp_lower_bound(instance: BppInstance) -> int:
    """Volume lower bound: ceil(total item size / capacity)."""
    total = sum(instance.items)
    return -(-total // instance.capacity)


def brute_force_bpp(instance: BppInstance) -> int:
    """Exact minimum bins by exhaustive packing; refuses more than 8 items."""
    items = sorted(instance.items, reverse=True)
    if len(items) > 8:
        raise ValueError("exact packing oracle refused for more than 8 items")
    capacity = instance.capacity
    best = len(items)

    def place(idx: int, loads: list[int]) -> None:
        nonlocal best
        if len(loads) >= best:
            return
        if idx == len(items):
            best = len(loads)
            return
        item = items[idx]
        seen = set()
        for b, load in enumerate(loads):
            if load + item <= capacity and load not in seen:
                seen.add(load)
                loads[b] += item
                place(idx + 1, loads)
                loads[b] -= item
        loads.append(item)
        place(idx + 1, loads)
        loads.pop()

    place(0, [])
    return best


def excess_fraction(bins_used: int, lower_bound: int) -> float:
    """Percent of bins beyond the volume lower bound."""
    if lower_bound < 1:
        raise ValueError("lower bound must be >= 1")
    return (bins_used - lower_bound) / lower_bound * 100.0


def optimality_gap(length: float, reference: float) -> float:
    """Percent excess of a tour length over the reference length."""
    if reference <= 0:
        raise ValueError("reference length must be > 0")
    return (length - reference) / reference * 100.0


# --- candidate simulation --------------------------------------------------------

def evaluate_tsp(
    session: ExecutorSession,
    instance: TspInstance,
    start_node: int = 0,
    budget_seconds: Optional[float] = None,
    with_trace: bool = False,
) -> EvalOutcome:
    """Constructive evaluation: repeatedly ask the candidate for the next node.

    The candidate sees the current node, the destination (= start node), the
    unvisited set and the full distance matrix. Returning a node outside the
    unvisited set is a contract violation.
    """
    n = instance.n
    if not 0 <= start_node < n:
        raise ValueError("start_node out of range")
    dist = distance_matrix(instance)
    deadline = None if budget_seconds is None else time.monotonic() + budget_seconds
    unvisited = set(range(n)) - {start_node}
    tour = [start_node]
    while unvisited:
        if deadline is not None and time.monotonic() > deadline:
            return EvalOutcome(Verdict.TIMEOUT, detail="instance budget exhausted")
        request = NextNodeCall(
            current=tour[-1],
            destination=start_node,
            unvisited=tuple(sorted(unvisited)),
            matrix=dist,
        )
        try:
            nxt = session.call(request)
        except HeuristicCallError as exc:
            return EvalOutcome(exc.verdict, detail=str(exc))
        if nxt not in unvisited:
            return EvalOutcome(
                Verdict.MALFORMED_OUTPUT, detail=f"node {nxt} is not unvisited"
            )
        unvisited.discard(nxt)
        tour.append(int(nxt))
    cost = tour_length(tour, instance)
    return EvalOutcome(Verdict.OK, cost=cost, trace=tuple(tour) if with_trace else None)


def evaluate_bpp_online(
    session: ExecutorSession,
    instance: BppInstance,
    budget_seconds: Optional[float] = None,
    with_trace: bool = False,
) -> EvalOutcome:
    """Online simulation: items arrive in order, placements are final.

    Feasible bins (remaining capacity >= item) are scored by the candidate
    and the argmax wins, ties to the lowest bin index; when nothing fits a
    new bin is opened by the harness without consulting the candidate. The
    cost is the percent excess over the volume lower bound.
    """
    capacity = instance.capacity
    remaining: list[int] = []
    trace: list[tuple[str, int]] = []
    deadline = None if budget_seconds is None else time.monotonic() + budget_seconds
    for item in instance.items:
        if deadline is not None and time.monotonic() > deadline:
            return EvalOutcome(Verdict.TIMEOUT, detail="instance budget exhausted")
        feasible = [i for i, r in enumerate(remaining) if r >= item]
        if not feasible:
            remaining.append(capacity - item)
            if with_trace:
                trace.append(("open", len(remaining) - 1))
            continue
        caps = np.asarray([remaining[i] for i in feasible], dtype=int)
        try:
            scores = session.call(ScoreCall(item=item, bins=caps))
        except HeuristicCallError as exc:
            return EvalOutcome(exc.verdict, detail=str(exc))
        chosen = feasible[int(np.argmax(scores))]
        remaining[chosen] -= item
        if remaining[chosen] < 0:  # unreachable by construction; keep the guard
            return EvalOutcome(Verdict.INFEASIBLE, detail="bin overfilled")
        if with_trace:
            trace.append(("place", chosen))
    cost = excess_fraction(len(remaining), bpp_lower_bound(instance))
    return EvalOutcome(Verdict.OK, cost=cost, trace=tuple(trace) if with_trace else None)


def evaluate_on_instance(
    session: ExecutorSession,
    instance: Instance,
    budget_seconds: Optional[float] = None,
) -> EvalOutcome:
    if isinstance(instance, TspInstance):
        return evaluate_tsp(session, instance, budget_seconds=budget_seconds)
    return evaluate_bpp_online(session, instance, budget_seconds=budget_seconds)


def fitness(
    candidate: HeuristicCandidate,
    factory: ExecutorFactory,
    instances: Sequence[Instance],
) -> FitnessRecord:
    """Mean objective over the instance set; one failure poisons the record.

    Per-instance costs are comparably scaled decimals: BPP uses the excess
    fraction / 100, TSP uses tour length / reference - 1.
    """
    if not instances:
        raise ValueError("instance set must be non-empty")
    kinds = {type(inst) for inst in instances}
    if len(kinds) > 1:
        raise ValueError("instances must all be the same problem type")
    is_tsp = isinstance(instances[0], TspInstance)
    if is_tsp != (factory.problem == "tsp"):
        raise ValueError(f"executor factory is for {factory.problem!r} instances")
    if is_tsp:
        for inst in instances:
            if inst.reference_cost is None or inst.reference_cost <= 0:
                raise ValueError("TSP fitness needs a positive reference_cost")

    costs: list[float] = []
    verdicts: list[Verdict] = []
    with factory.load(candidate.body) as session:
        for inst in instances:
            outcome = evaluate_on_instance(session, inst, budget_seconds=factory.timeout)
            verdicts.append(outcome.verdict)
            if outcome.verdict is not Verdict.OK:
                costs.append(math.nan)
            elif is_tsp:
                costs.append(outcome.cost / inst.reference_cost - 1.0)
            else:
                costs.append(outcome.cost / 100.0)
    return make_fitness_record(candidate.id, costs, verdicts)


# --- instance file IO -------------------------------------------------------------

def instance_to_dict(instance: Instance) -> dict:
    if isinstance(instance, TspInstance):
        doc = {"problem": "tsp", "coords": instance.coords.tolist()}
        if instance.reference_cost is not None:
            doc["reference_cost"] = instance.reference_cost
        if instance.rounded:
            doc["rounded"] = True
        return doc
    return {"problem": "bpp", "capacity": instance.capacity, "items": list(instance.items)}


def instance_from_dict(doc: dict) -> Instance:
    problem = doc.get("problem")
    if problem == "tsp":
        return TspInstance(
            coords=np.asarray(doc["coords"], dtype=float),
            reference_cost=doc.get("reference_cost"),
            rounded=bool(doc.get("rounded", False)),
        )
    if problem == "bpp":
        return BppInstance(capacity=int(doc["capacity"]), items=tuple(doc["items"]))
    raise ValueError(f"unknown problem in instance document: {problem!r}")


def load_instance_file(path: str) -> Instance:
    with open(path, "r", encoding="utf-8") as fh:
        return instance_from_dict(json.load(fh))


def save_instance_file(instance: Instance, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_to_dict(instance), fh)
        fh.write("\n")
