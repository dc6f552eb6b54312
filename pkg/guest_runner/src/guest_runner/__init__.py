"""Guest side of the candidate wire protocol.

Runs as a subprocess: reads line-delimited JSON requests on stdin, writes
exactly one reply line per request on stdout. The first request must be a
load handshake carrying the candidate source; afterwards score / next calls
are served sequentially until stdin closes.

Candidate code executes with a restricted builtin set and an import
allowlist (standard math/array facilities plus numpy). This is fault
isolation and interface hygiene, not a hardened security boundary; the host
process supplies the kill-on-timeout guarantee. Candidate prints are
redirected to stderr so the protocol stream stays clean.
"""
from __future__ import annotations

import builtins
import contextlib
import json
import sys
from typing import Callable, Optional, TextIO

import numpy as np

__version__ = "0.1.0"

ALLOWED_IMPORTS = frozenset({
    "math",
    "cmath",
    "random",
    "itertools",
    "functools",
    "collections",
    "heapq",
    "bisect",
    "operator",
    "statistics",
    "time",
    "numpy",
})

_SAFE_BUILTIN_NAMES = (
    "abs", "all", "any", "bool", "callable", "complex", "dict", "divmod",
    "enumerate", "filter", "float", "frozenset", "getattr", "hasattr", "hash",
    "int", "isinstance", "issubclass", "iter", "len", "list", "map", "max",
    "min", "next", "object", "pow", "print", "range", "repr", "reversed",
    "round", "set", "slice", "sorted", "str", "sum", "tuple", "zip",
    "ArithmeticError", "AttributeError", "BaseException", "Exception",
    "FloatingPointError", "IndexError", "KeyError", "LookupError",
    "NameError", "NotImplementedError", "OverflowError", "RuntimeError",
    "StopIteration", "TypeError", "ValueError", "ZeroDivisionError",
)

_REQUIRED_FUNCTION = {"bpp": "score", "tsp": "select_next_node"}


def _guarded_import(name, globals=None, locals=None, fromlist=(), level=0):
    root = name.split(".")[0]
    if level != 0 or root not in ALLOWED_IMPORTS:
        raise ImportError(f"import of {name!r} is not allowed in candidate code")
    return builtins.__import__(name, globals, locals, fromlist, level)


def _sandbox_globals() -> dict:
    safe = {name: getattr(builtins, name) for name in _SAFE_BUILTIN_NAMES}
    safe["__import__"] = _guarded_import
    safe["True"] = True
    safe["False"] = False
    safe["None"] = None
    # numpy is pre-bound for convenience; the prompt contract promises it
    return {"__builtins__": safe, "np": np, "numpy": np}


@contextlib.contextmanager
def _stdout_to_stderr():
    previous = sys.stdout
    sys.stdout = sys.stderr
    try:
        yield
    finally:
        sys.stdout = previous


class GuestEnvironment:
    """One compiled candidate function plus its execution namespace."""

    def __init__(self, problem: str, source: str):
        if problem not in _REQUIRED_FUNCTION:
            raise ValueError(f"unknown problem: {problem!r}")
        if not isinstance(source, str) or not source.strip():
            raise ValueError("candidate source must be non-empty text")
        self.problem = problem
        namespace = _sandbox_globals()
        code = compile(source, "<candidate>", "exec")
        with _stdout_to_stderr():
            exec(code, namespace)
        fn_name = _REQUIRED_FUNCTION[problem]
        fn = namespace.get(fn_name)
        if not callable(fn):
            raise ValueError(f"source does not define a callable {fn_name!r}")
        self._fn: Callable = fn

    def score(self, item: int, bins: list) -> list:
        with _stdout_to_stderr():
            result = self._fn(int(item), np.asarray(bins))
        return np.asarray(result, dtype=float).tolist()

    def next_node(self, current: int, destination: int, unvisited: list,
                  matrix: list) -> int:
        with _stdout_to_stderr():
            result = self._fn(
                int(current),
                int(destination),
                np.asarray(unvisited),
                np.asarray(matrix, dtype=float),
            )
        return int(result)


def _error(message: str) -> dict:
    return {"ok": False, "error": message}


def _handle(request: dict, env: Optional[GuestEnvironment]) -> tuple[dict, Optional[GuestEnvironment]]:
    if not isinstance(request, dict):
        return _error("request must be a JSON object"), env
    op = request.get("op")
    if op == "load":
        if env is not None:
            return _error("a candidate is already loaded in this session"), env
        try:
            env = GuestEnvironment(request.get("problem"), request.get("source"))
        except Exception as exc:
            return _error(f"{type(exc).__name__}: {exc}"), None
        return {"ok": True}, env
    if env is None:
        return _error("handshake required before calls"), env
    try:
        if op == "score":
            if env.problem != "bpp":
                return _error("score call on a tsp session"), env
            return {"scores": env.score(request["item"], request["bins"])}, env
        if op == "next":
            if env.problem != "tsp":
                return _error("next call on a bpp session"), env
            node = env.next_node(
                request["current"],
                request["destination"],
                request["unvisited"],
                request["matrix"],
            )
            return {"next": node}, env
    except Exception as exc:
        return _error(f"{type(exc).__name__}: {exc}"), env
    return _error(f"unknown op: {op!r}"), env


def serve(stdin: Optional[TextIO] = None, stdout: Optional[TextIO] = None) -> int:
    """Process requests until stdin closes; one reply line per request.

    Candidate faults become error replies and the session keeps serving.
    Returns the process exit code: 0 for a clean stdin close, nonzero when
    the serve loop itself fails.
    """
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    env: Optional[GuestEnvironment] = None
    try:
        for line in stdin:
            line = line.strip()
            if not line:
                continue
            try:
                request = json.loads(line)
            except json.JSONDecodeError:
                reply = _error("request is not valid JSON")
            else:
                reply, env = _handle(request, env)
            stdout.write(json.dumps(reply) + "\n")
            stdout.flush()
    except Exception:
        return 1
    return 0
