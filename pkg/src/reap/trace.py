"""Run traces: recording, serialization, plan replay, and trajectory export."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Sequence

from .errors import EmptySet, IoFailure
from .eval.metrics import cem
from .plan import TaskPlan, apply_operation

DEFAULT_MAX_CHARS = 13000
TIMING_KEYS = frozenset({"ts", "timings"})


@dataclass
class Trace:
    question: str
    config: dict[str, Any] = field(default_factory=dict)
    gold: list[str] | None = None
    answer: str | None = None
    iterations: int = 0
    status: str = "Running"
    termination: str | None = None
    events: list[dict[str, Any]] = field(default_factory=list)
    timings: dict[str, Any] = field(default_factory=dict)
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def __post_init__(self) -> None:
        self.timings.setdefault("started", datetime.now(timezone.utc).isoformat())

    def emit(self, event: dict[str, Any]) -> dict[str, Any]:
        event = {"seq": len(self.events), **event, "ts": round(time.perf_counter() - self._t0, 6)}
        self.events.append(event)
        return event

    def extend(self, events: Iterable[dict[str, Any]]) -> None:
        for e in events:
            self.emit(e)

    def finish(self) -> None:
        self.timings["finished"] = datetime.now(timezone.utc).isoformat()
        self.timings["elapsed_s"] = round(time.perf_counter() - self._t0, 6)

    def of_type(self, kind: str) -> list[dict[str, Any]]:
        return [e for e in self.events if e["type"] == kind]

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"question": self.question}
        if self.gold is not None:
            out["gold"] = list(self.gold)
        out.update(
            answer=self.answer,
            iterations=self.iterations,
            status=self.status,
            termination=self.termination,
            events=self.events,
            config=self.config,
            timings=self.timings,
        )
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)


def strip_timings(value: Any) -> Any:
    """Comparison form of a trace: every timing field removed, recursively."""
    if isinstance(value, dict):
        return {k: strip_timings(v) for k, v in value.items() if k not in TIMING_KEYS}
    if isinstance(value, list):
        return [strip_timings(v) for v in value]
    return value


def comparison_json(trace: Trace | dict[str, Any]) -> str:
    data = trace.to_dict() if isinstance(trace, Trace) else trace
    return json.dumps(strip_timings(data), ensure_ascii=False, sort_keys=True)


def _as_dict(trace: Trace | dict[str, Any]) -> dict[str, Any]:
    return trace.to_dict() if isinstance(trace, Trace) else trace


def replay_plan(trace: Trace | dict[str, Any]) -> tuple[TaskPlan | None, TaskPlan | None]:
    """Re-apply the recorded plan operations; returns (replayed, last recorded)."""
    replayed = recorded = None
    for e in _as_dict(trace)["events"]:
        if e["type"] != "plan":
            continue
        snapshot = TaskPlan.from_dict(e["plan"])
        if e["op"] == "init":
            replayed = snapshot
        else:
            if replayed is None:
                raise ValueError("plan operation recorded before the initial plan")
            replayed = apply_operation(replayed, e["op"], e["args"])
        recorded = snapshot
    return replayed, recorded


def replay_mismatches(trace: Trace | dict[str, Any]) -> list[int]:
    """Sequence numbers of plan events whose snapshot differs from the re-applied plan."""
    bad: list[int] = []
    current: TaskPlan | None = None
    for e in _as_dict(trace)["events"]:
        if e["type"] != "plan":
            continue
        snapshot = TaskPlan.from_dict(e["plan"])
        if e["op"] == "init":
            current = snapshot
            continue
        if current is None:
            raise ValueError("plan operation recorded before the initial plan")
        current = apply_operation(current, e["op"], e["args"])
        if current != snapshot:
            bad.append(e.get("seq", -1))
            current = snapshot
    return bad


# -- persistence ---------------------------------------------------------------


def write_traces(traces: Iterable[Trace | dict[str, Any]], path: str | Path, append: bool = False) -> None:
    try:
        with open(path, "a" if append else "w", encoding="utf-8") as fh:
            for t in traces:
                fh.write(json.dumps(_as_dict(t), ensure_ascii=False) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write traces to {path}: {exc}") from None


def load_traces(path: str | Path) -> list[dict[str, Any]]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read traces from {path}: {exc}") from None
    out = []
    for n, line in enumerate(lines, start=1):
        if line.strip():
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{n}: invalid trace record ({exc.msg})") from None
    return out


# -- training-data export --------------------------------------------------------


def is_correct(trace: dict[str, Any]) -> bool | None:
    """Stored verdict if present, else cover-exact-match against gold; None without gold."""
    if isinstance(trace.get("correct"), bool):
        return trace["correct"]
    gold = trace.get("gold")
    if not gold or trace.get("answer") is None:
        return None
    golds = [gold] if isinstance(gold, str) else list(gold)
    return cem(trace["answer"], golds)


def trajectory_chars(trace: dict[str, Any]) -> int:
    return len(json.dumps(trace, ensure_ascii=False))


@dataclass
class ExportReport:
    total: int = 0
    kept: int = 0
    dropped_incorrect: int = 0
    dropped_missing_gold: int = 0
    dropped_too_long: int = 0

    def to_dict(self) -> dict[str, int]:
        return dict(self.__dict__)


def export_traces(traces: Sequence[Trace | dict[str, Any]], out_path: str | Path, *,
                  require_correct: bool = True, max_chars: int = DEFAULT_MAX_CHARS) -> ExportReport:
    """Write trajectories that pass the filters, one JSON record per line.

    Filters apply in order (correctness, then length); each dropped trace is
    counted once, under the first filter it fails. A trajectory is kept only
    if its serialized length is strictly below ``max_chars``.
    """
    report = ExportReport(total=len(traces))
    kept = []
    for t in traces:
        data = _as_dict(t)
        if require_correct:
            verdict = is_correct(data)
            if verdict is None:
                report.dropped_missing_gold += 1
                continue
            if not verdict:
                report.dropped_incorrect += 1
                continue
        if trajectory_chars(data) >= max_chars:
            report.dropped_too_long += 1
            continue
        kept.append(data)
    write_traces(kept, out_path)
    report.kept = len(kept)
    return report


def avg_iterations(traces: Sequence[Trace | dict[str, Any]], correct_only: bool = False) -> float:
    rows = [_as_dict(t) for t in traces]
    if correct_only:
        rows = [r for r in rows if is_correct(r)]
    if not rows:
        raise EmptySet("no traces to average")
    return sum(r["iterations"] for r in rows) / len(rows)
