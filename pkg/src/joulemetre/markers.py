"""Marker events and their newline-delimited JSON wire format.

One event per line: ``{"t_ns":<int>,"kind":"epoch_start","index":<int>}``.
This is a byte-exact contract shared with workload adapters; field names and
the kind vocabulary must not drift. ``clock_sync`` is a transport-level kind
emitted once at adapter session open so the profiler can align the adapter's
monotonic clock with its own.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ParseError

#: Environment variable through which the profiler hands the child the
#: marker sink path (a named pipe, or a plain file as fallback).
MARKER_PIPE_ENV = "JM_MARKER_PIPE"


class MarkerKind(str, Enum):
    RUN_START = "run_start"
    RUN_END = "run_end"
    EPOCH_START = "epoch_start"
    EPOCH_END = "epoch_end"
    BATCH_DONE = "batch_done"
    PHASE = "phase"
    CLOCK_SYNC = "clock_sync"


_INDEXED_KINDS = {MarkerKind.EPOCH_START, MarkerKind.EPOCH_END, MarkerKind.BATCH_DONE}


@dataclass(frozen=True)
class MarkerEvent:
    """A timestamped boundary event from the supervised workload."""

    t_ns: int
    kind: MarkerKind
    index: int | None = None
    phase: str | None = None

    def to_line(self) -> str:
        payload: dict = {"t_ns": self.t_ns, "kind": self.kind.value}
        if self.index is not None:
            payload["index"] = self.index
        if self.phase is not None:
            payload["phase"] = self.phase
        return json.dumps(payload, separators=(",", ":"))


def parse_marker_line(line: str, lineno: int | None = None) -> MarkerEvent:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid marker JSON: {exc}", line=lineno) from exc
    if not isinstance(obj, dict):
        raise ParseError("marker line is not a JSON object", line=lineno)
    try:
        t_ns = int(obj["t_ns"])
        kind = MarkerKind(obj["kind"])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"marker missing/invalid field: {exc}", line=lineno) from exc
    index = obj.get("index")
    if index is not None:
        index = int(index)
    elif kind in _INDEXED_KINDS:
        raise ParseError(f"{kind.value} marker requires an index", line=lineno)
    phase = obj.get("phase")
    return MarkerEvent(t_ns=t_ns, kind=kind, index=index, phase=phase)


def read_marker_file(path: str | Path) -> list[MarkerEvent]:
    events = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line:
                events.append(parse_marker_line(line, lineno))
    return events


def write_marker_file(events: Iterable[MarkerEvent], path: str | Path) -> None:
    text = "".join(e.to_line() + "\n" for e in events)
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def iter_marker_lines(lines: Iterable[str]) -> Iterator[MarkerEvent]:
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if line:
            yield parse_marker_line(line, lineno)
