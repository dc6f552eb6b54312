"""Uniform execution interface for candidate heuristics.

Two backends sit behind one session type: registered native builtins (pure
in-process functions) and untrusted guest source run in a subprocess speaking
line-delimited JSON over stdin/stdout. One subprocess per session; a timeout
or crash poisons the session permanently.
"""
from __future__ import annotations

import importlib.util
import json
import queue
import re
import subprocess
import sys
import threading
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .core import BuiltinBody, CandidateBody, GuestBody, Verdict, candidate_key


@dataclass(frozen=True)
class ScoreCall:
    """Online bin packing: score the feasible bins for one item."""

    item: int
    bins: np.ndarray


@dataclass(frozen=True)
class NextNodeCall:
    """TSP construction: pick the next node to visit."""

    current: int
    destination: int
    unvisited: tuple[int, ...]
    matrix: np.ndarray


Request = Union[ScoreCall, NextNodeCall]


class HeuristicCallError(Exception):
    """A call failed; verdict says how (timeout, crash, malformed_output)."""

    def __init__(self, verdict: Verdict, message: str):
        self.verdict = verdict
        super().__init__(message)


# --- builtin registry -------------------------------------------------------

def _first_fit(params: Mapping[str, float]) -> Callable:
    def score(item: int, bins: np.ndarray) -> np.ndarray:
        # strictly decreasing by index: argmax lands on the first feasible bin
        return -np.arange(len(bins), dtype=float)

    return score


def _best_fit(params: Mapping[str, float]) -> Callable:
    def score(item: int, bins: np.ndarray) -> np.ndarray:
        return -(bins - item).astype(float)

    return score


def _worst_fit(params: Mapping[str, float]) -> Callable:
    def score(item: int, bins: np.ndarray) -> np.ndarray:
        return (bins - item).astype(float)

    return score


def _weighted_fit(params: Mapping[str, float]) -> Callable:
    w_resid = float(params.get("residual_weight", 1.0))
    w_index = float(params.get("index_weight", 0.0))

    def score(item: int, bins: np.ndarray) -> np.ndarray:
        residual = (bins - item).astype(float)
        return -w_resid * residual - w_index * np.arange(len(bins), dtype=float)

    return score


def _nearest_neighbour(params: Mapping[str, float]) -> Callable:
    def select_next(current: int, destination: int, unvisited: np.ndarray,
                    matrix: np.ndarray) -> int:
        return int(unvisited[int(np.argmin(matrix[current, unvisited]))])

    return select_next


@dataclass(frozen=True)
class BuiltinSpec:
    name: str
    problem: str
    description: str
    pseudo_source: str
    factory: Callable[[Mapping[str, float]], Callable]


_BUILTINS: tuple[BuiltinSpec, ...] = (
    BuiltinSpec(
        name="first_fit",
        problem="bpp",
        description="place each item into the lowest-index feasible bin",
        pseudo_source=(
            "def score(item, bins):\n"
            "    return -np.arange(len(bins))\n"
        ),
        factory=_first_fit,
    ),
    BuiltinSpec(
        name="best_fit",
        problem="bpp",
        description="place each item into the feasible bin leaving the least residual",
        pseudo_source=(
            "def score(item, bins):\n"
            "    return -(bins - item)\n"
        ),
        factory=_best_fit,
    ),
    BuiltinSpec(
        name="worst_fit",
        problem="bpp",
        description="place each item into the feasible bin leaving the most residual",
        pseudo_source=(
            "def score(item, bins):\n"
            "    return bins - item\n"
        ),
        factory=_worst_fit,
    ),
    BuiltinSpec(
        name="weighted_fit",
        problem="bpp",
        description="blend of residual preference and low-index preference "
        "(params: residual_weight, index_weight)",
        pseudo_source=(
            "def score(item, bins):\n"
            "    residual = bins - item\n"
            "    order = np.arange(len(bins))\n"
            "    return -residual_weight * residual - index_weight * order\n"
        ),
        factory=_weighted_fit,
    ),
    BuiltinSpec(
        name="nearest_neighbour",
        problem="tsp",
        description="always move to the closest unvisited node",
        pseudo_source=(
            "def select_next_node(current_node, destination_node, unvisited_nodes, distance_matrix):\n"
            "    return unvisited_nodes[np.argmin(distance_matrix[current_node, unvisited_nodes])]\n"
        ),
        factory=_nearest_neighbour,
    ),
)

_BUILTIN_INDEX = {spec.name: spec for spec in _BUILTINS}


def registered_builtins(problem: Optional[str] = None) -> tuple[BuiltinSpec, ...]:
    """All registered native heuristics, optionally filtered by problem."""
    if problem is None:
        return _BUILTINS
    return tuple(spec for spec in _BUILTINS if spec.problem == problem)


def builtin_spec(name: str) -> BuiltinSpec:
    try:
        return _BUILTIN_INDEX[name]
    except KeyError:
        raise ValueError(f"unknown builtin heuristic: {name!r}") from None


def candidate_source(body: CandidateBody) -> str:
    """Source text used for code similarity: guest source as-is, builtins via
    their fixed canonical pseudo-source."""
    if isinstance(body, GuestBody):
        return body.source
    return builtin_spec(body.name).pseudo_source


_BUILTIN_MARKER = re.compile(r"#\s*builtin:\s*([A-Za-z_][A-Za-z0-9_]*)\s*(\{.*\})?\s*$")


def body_from_source(source: str, problem: str) -> CandidateBody:
    """Interpret parsed candidate code as a body.

    A leading `# builtin: <name> {params}` marker line referring to a
    registered heuristic of the right problem becomes a BuiltinBody, which
    lets the engine run fully deterministic passes with no guest runner.
    Anything else is guest source.
    """
    for line in source.splitlines():
        if not line.strip():
            continue
        m = _BUILTIN_MARKER.match(line.strip())
        if m:
            name, raw_params = m.group(1), m.group(2)
            spec = _BUILTIN_INDEX.get(name)
            if spec is not None and spec.problem == problem:
                params = json.loads(raw_params) if raw_params else {}
                return BuiltinBody(name, params)
        break
    return GuestBody(source)


# --- sessions ----------------------------------------------------------------

def default_runner_cmd() -> Optional[list[str]]:
    """Command for the guest runner subprocess, if the package is installed."""
    if importlib.util.find_spec("guest_runner") is not None:
        return [sys.executable, "-m", "guest_runner"]
    return None


def _validate_response(request: Request, value) -> Union[np.ndarray, int]:
    if isinstance(request, ScoreCall):
        try:
            scores = np.asarray(value, dtype=float)
        except (TypeError, ValueError) as exc:
            raise HeuristicCallError(
                Verdict.MALFORMED_OUTPUT, f"scores not numeric: {exc}"
            ) from None
        if scores.shape != (len(request.bins),):
            raise HeuristicCallError(
                Verdict.MALFORMED_OUTPUT,
                f"expected {len(request.bins)} scores, got shape {scores.shape}",
            )
        if not np.all(np.isfinite(scores)):
            raise HeuristicCallError(Verdict.MALFORMED_OUTPUT, "non-finite score")
        return scores
    if isinstance(request, NextNodeCall):
        if isinstance(value, (bool, float)) and not float(value).is_integer():
            raise HeuristicCallError(Verdict.MALFORMED_OUTPUT, f"non-integer node: {value!r}")
        try:
            node = int(value)
        except (TypeError, ValueError):
            raise HeuristicCallError(
                Verdict.MALFORMED_OUTPUT, f"next node not an integer: {value!r}"
            ) from None
        return node
    raise TypeError(f"unsupported request: {request!r}")


class ExecutorSession:
    """One loaded candidate, callable until closed or failed."""

    def __init__(self, candidate_id: str, backend: str, timeout: float):
        self.candidate_id = candidate_id
        self.backend = backend
        self.timeout = timeout
        self.state = "loaded"
        self.failure_verdict: Optional[Verdict] = None
        self.failure_detail = ""

    def _fail(self, verdict: Verdict, detail: str) -> HeuristicCallError:
        self.state = "failed"
        self.failure_verdict = verdict
        self.failure_detail = detail
        return HeuristicCallError(verdict, detail)

    def _check_callable(self) -> None:
        if self.state == "failed":
            raise HeuristicCallError(
                self.failure_verdict or Verdict.CRASH,
                f"session failed earlier: {self.failure_detail}",
            )
        if self.state != "loaded":
            raise HeuristicCallError(Verdict.CRASH, "session closed")

    def call(self, request: Request):
        raise NotImplementedError

    def close(self) -> None:
        if self.state == "loaded":
            self.state = "closed"

    def __enter__(self) -> "ExecutorSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class BuiltinSession(ExecutorSession):
    def __init__(self, candidate_id: str, fn: Callable, problem: str, timeout: float):
        super().__init__(candidate_id, "builtin", timeout)
        self._fn = fn
        self._problem = problem

    def call(self, request: Request):
        self._check_callable()
        if isinstance(request, ScoreCall):
            if self._problem != "bpp":
                raise HeuristicCallError(Verdict.CRASH, "score call on a tsp session")
            try:
                value = self._fn(int(request.item), np.asarray(request.bins))
            except Exception as exc:  # candidate fault, not an engine fault
                raise HeuristicCallError(Verdict.CRASH, f"builtin raised: {exc}") from exc
        elif isinstance(request, NextNodeCall):
            if self._problem != "tsp":
                raise HeuristicCallError(Verdict.CRASH, "next-node call on a bpp session")
            try:
                value = self._fn(
                    int(request.current),
                    int(request.destination),
                    np.asarray(request.unvisited, dtype=int),
                    np.asarray(request.matrix),
                )
            except Exception as exc:
                raise HeuristicCallError(Verdict.CRASH, f"builtin raised: {exc}") from exc
        else:
            raise TypeError(f"unsupported request: {request!r}")
        return _validate_response(request, value)


class GuestSession(ExecutorSession):
    """Client side of the guest wire protocol.

    One request/response exchange per call; any non-JSON line from the guest
    is a crash; a timeout kills the subprocess and no response from it is
    ever accepted again.
    """

    def __init__(self, candidate_id: str, source: str, problem: str, timeout: float,
                 runner_cmd: Sequence[str]):
        super().__init__(candidate_id, "guest", timeout)
        self._proc: Optional[subprocess.Popen] = None
        self._lines: "queue.Queue[Optional[str]]" = queue.Queue()
        self._reader: Optional[threading.Thread] = None
        try:
            self._proc = subprocess.Popen(
                list(runner_cmd),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            self._fail(Verdict.CRASH, f"could not start guest runner: {exc}")
            return
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        try:
            reply = self._exchange({"op": "load", "problem": problem, "source": source})
        except HeuristicCallError as exc:
            self._fail(exc.verdict, str(exc))
            self._terminate()
            return
        if not reply.get("ok"):
            self._fail(Verdict.MALFORMED_OUTPUT,
                       f"handshake rejected: {reply.get('error', 'unknown error')}")
            self._terminate()

    def _pump(self) -> None:
        assert self._proc is not None and self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _terminate(self) -> None:
        proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            proc.kill()
        except OSError:
            pass
        proc.wait()

    def _exchange(self, payload: dict) -> dict:
        proc = self._proc
        if proc is None or proc.stdin is None:
            raise HeuristicCallError(Verdict.CRASH, "guest process gone")
        try:
            proc.stdin.write(json.dumps(payload) + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise HeuristicCallError(Verdict.CRASH, f"guest pipe broken: {exc}") from None
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self._terminate()
            raise HeuristicCallError(
                Verdict.TIMEOUT, f"no reply within {self.timeout}s"
            ) from None
        if line is None:
            raise HeuristicCallError(Verdict.CRASH, "guest exited mid-call")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError:
            raise HeuristicCallError(
                Verdict.CRASH, f"non-JSON line from guest: {line[:80]!r}"
            ) from None
        if not isinstance(reply, dict):
            raise HeuristicCallError(Verdict.CRASH, "guest reply is not an object")
        return reply

    def call(self, request: Request):
        self._check_callable()
        if isinstance(request, ScoreCall):
            payload = {
                "op": "score",
                "item": int(request.item),
                "bins": [int(b) for b in request.bins],
            }
            value_key = "scores"
        elif isinstance(request, NextNodeCall):
            payload = {
                "op": "next",
                "current": int(request.current),
                "destination": int(request.destination),
                "unvisited": [int(u) for u in request.unvisited],
                "matrix": np.asarray(request.matrix, dtype=float).tolist(),
            }
            value_key = "next"
        else:
            raise TypeError(f"unsupported request: {request!r}")
        try:
            reply = self._exchange(payload)
        except HeuristicCallError as exc:
            if exc.verdict in (Verdict.TIMEOUT, Verdict.CRASH):
                raise self._fail(exc.verdict, str(exc)) from None
            raise
        if value_key not in reply:
            # candidate-level fault reported by the runner: soft error
            if reply.get("ok") is False:
                raise HeuristicCallError(
                    Verdict.MALFORMED_OUTPUT,
                    f"candidate error: {reply.get('error', 'unknown')}",
                )
            raise self._fail(Verdict.CRASH, f"protocol violation in reply: {reply!r}")
        return _validate_response(request, reply[value_key])

    def close(self) -> None:
        super().close()
        self._terminate()
        if self._reader is not None:
            self._reader.join(timeout=1.0)
            self._reader = None


class FailedSession(ExecutorSession):
    """Placeholder when load itself failed; every call errors immediately."""

    def __init__(self, candidate_id: str, backend: str, verdict: Verdict, detail: str):
        super().__init__(candidate_id, backend, timeout=0.0)
        self._fail(verdict, detail)

    def call(self, request: Request):
        self._check_callable()


@dataclass
class ExecutorFactory:
    """Binds problem, timeout and runner command; loads sessions for bodies."""

    problem: str
    timeout: float = 70.0
    runner_cmd: Optional[Sequence[str]] = None

    def load(self, body: CandidateBody) -> ExecutorSession:
        return load(body, self.problem, self.timeout, runner_cmd=self.runner_cmd)


def load(
    body: CandidateBody,
    problem: str,
    timeout: float,
    runner_cmd: Optional[Sequence[str]] = None,
) -> ExecutorSession:
    """Load a candidate body into a callable session.

    Builtin bodies bind a registered native function and never spawn a
    subprocess. Guest bodies spawn the runner and perform the load
    handshake; handshake failures yield an already-failed session rather
    than raising, so evaluation can record the verdict.
    """
    cid = candidate_key(body)
    if isinstance(body, BuiltinBody):
        spec = builtin_spec(body.name)
        if spec.problem != problem:
            raise ValueError(
                f"builtin {body.name!r} is a {spec.problem} heuristic, not {problem}"
            )
        return BuiltinSession(cid, spec.factory(body.params), problem, timeout)
    cmd = list(runner_cmd) if runner_cmd else default_runner_cmd()
    if not cmd:
        return FailedSession(cid, "guest", Verdict.CRASH, "no guest runner available")
    return GuestSession(cid, body.source, problem, timeout, cmd)
