"""Append-only structured run logs (line-delimited JSON) and CSV exports.

One JSON object per line with a strictly increasing sequence number, so a
crash mid-run always leaves a parseable prefix. Exports reduce a log to the
trajectory, turn-decision and partition tables used for offline analysis.
"""
from __future__ import annotations

import csv
import io
import json
import time
from typing import Callable, Iterable, Iterator, Optional, Sequence

EVENT_KINDS = frozenset({
    "run_start",
    "instance_set",
    "candidate_evaluated",
    "partition",
    "group",
    "turn",
    "reminder",
    "selection",
    "generation_summary",
    "run_end",
})


class RunLogger:
    """Single-writer JSONL logger; also keeps events in memory for callers."""

    def __init__(
        self,
        path: Optional[str] = None,
        run_id: str = "run",
        clock: Callable[[], float] = time.time,
    ):
        self.run_id = run_id
        self.clock = clock
        self.events: list[dict] = []
        self._seq = 0
        self._fh = open(path, "w", encoding="utf-8") if path else None

    def emit(self, kind: str, /, **payload) -> dict:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown run-log event kind: {kind!r}")
        reserved = {"seq", "ts", "run", "kind"} & payload.keys()
        if reserved:
            raise ValueError(f"payload uses reserved event fields: {sorted(reserved)}")
        event = {"seq": self._seq, "ts": self.clock(), "run": self.run_id, "kind": kind}
        event.update(payload)
        self._seq += 1
        self.events.append(event)
        if self._fh is not None:
            self._fh.write(json.dumps(event) + "\n")
            self._fh.flush()
        return event

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "RunLogger":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_events(path: str) -> list[dict]:
    """Parse a JSONL run log, reporting the line number of any corrupt line."""
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                event = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"corrupt run log at line {lineno}: {exc}") from None
            if not isinstance(event, dict) or "kind" not in event:
                raise ValueError(f"corrupt run log at line {lineno}: not an event object")
            events.append(event)
    return events


def export_trajectory(events: Iterable[dict]) -> list[tuple[int, float, int]]:
    """(generation, best_fitness, cumulative llm tokens) per generation summary."""
    rows = []
    for event in events:
        if event["kind"] == "generation_summary":
            rows.append(
                (int(event["generation"]), float(event["best_fitness"]),
                 int(event.get("tokens_used", 0)))
            )
    return rows


def export_turns(events: Iterable[dict]) -> list[tuple[int, str, int]]:
    """(turn index, decision, count) over all sessions in the log."""
    counts: dict[tuple[int, str], int] = {}
    for event in events:
        if event["kind"] == "turn":
            key = (int(event["turn"]), str(event["decision"]))
            counts[key] = counts.get(key, 0) + 1
    return [(t, d, c) for (t, d), c in sorted(counts.items())]


def export_groups(events: Iterable[dict]) -> list[tuple[int, str, int, str]]:
    """(generation, provenance, cluster index, members) per logged partition."""
    rows = []
    for event in events:
        if event["kind"] == "partition":
            generation = int(event["generation"])
            provenance = str(event["provenance"])
            for idx, cluster in enumerate(event["clusters"]):
                rows.append((generation, provenance, idx, "|".join(cluster)))
    return rows


def write_csv(rows: Sequence[Sequence], header: Sequence[str], stream) -> None:
    writer = csv.writer(stream)
    writer.writerow(header)
    writer.writerows(rows)


def render_csv(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    buffer = io.StringIO()
    write_csv(rows, header, buffer)
    return buffer.getvalue()
