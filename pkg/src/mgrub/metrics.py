"""Trace records, deadline-miss accounting and run statistics.

Trace files are newline-delimited JSON: a header object followed by one
record per line, times in integer nanoseconds. Metrics files are CSV with the
column order given by ``METRICS_COLUMNS`` / ``TASK_COLUMNS``.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field, fields
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

TRACE_FORMAT = "mgrub-trace"
TRACE_VERSION = 1

Snapshot = Union[None, Fraction, float, Tuple]


@dataclass
class TraceRecord:
    time: int
    kind: str
    server_id: Optional[int] = None
    cpu: Optional[int] = None
    q: Union[None, int, Fraction, float] = None
    d: Optional[int] = None
    state: Optional[str] = None
    uinact: Snapshot = None
    rule: Optional[str] = None
    from_state: Optional[str] = None
    q_prev: Union[None, int, Fraction, float] = None
    d_prev: Optional[int] = None
    job: Optional[int] = None
    job_arrival: Optional[int] = None
    job_deadline: Optional[int] = None
    # "exec" records: settled interval [time, time + duration) at ``rate``
    duration: Optional[int] = None
    rate: Union[None, Fraction, float] = None
    consumed: Union[None, int, Fraction, float] = None
    migrated: bool = False

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None or (f.name == "migrated" and not v):
                continue
            if isinstance(v, Fraction):
                v = float(v)
            elif isinstance(v, tuple):
                v = [float(x) for x in v]
            out[f.name] = v
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "TraceRecord":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown trace fields: {sorted(unknown)}")
        if "time" not in obj or "kind" not in obj:
            raise ValueError("trace record needs 'time' and 'kind'")
        obj = dict(obj)
        if isinstance(obj.get("uinact"), list):
            obj["uinact"] = tuple(obj["uinact"])
        return cls(**obj)


class TraceRecorder:
    """In-memory sink; enforces nondecreasing time."""

    def __init__(self, include_exec: bool = True):
        self.records: List[TraceRecord] = []
        self.include_exec = include_exec

    def __call__(self, rec: TraceRecord):
        record(self.records, rec, self.include_exec)


def record(trace: List[TraceRecord], rec: TraceRecord, include_exec: bool = True):
    if trace and rec.time < trace[-1].time:
        raise ValueError(f"trace time went backwards: {rec.time} < {trace[-1].time}")
    if rec.kind == "exec" and not include_exec:
        return
    trace.append(rec)


def _header() -> str:
    return json.dumps({"format": TRACE_FORMAT, "version": TRACE_VERSION}) + "\n"


class TraceWriter:
    """Streaming JSONL sink; writes the header on construction."""

    def __init__(self, fh, include_exec: bool = True):
        self.fh = fh
        self.include_exec = include_exec
        self.count = 0
        fh.write(_header())

    def __call__(self, rec: TraceRecord):
        if rec.kind == "exec" and not self.include_exec:
            return
        self.fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
        self.count += 1


def write_trace(path_or_file, trace: Iterable[TraceRecord]):
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", encoding="utf-8") if own else path_or_file
    try:
        fh.write(_header())
        for rec in trace:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
    finally:
        if own:
            fh.close()


def read_trace(path_or_file) -> List[TraceRecord]:
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, encoding="utf-8") if own else path_or_file
    try:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    finally:
        if own:
            fh.close()
    if not lines:
        raise ValueError("empty trace file (missing header)")
    header = json.loads(lines[0])
    if header.get("format") != TRACE_FORMAT or header.get("version") != TRACE_VERSION:
        raise ValueError(f"not a {TRACE_FORMAT} v{TRACE_VERSION} file")
    return [TraceRecord.from_json(json.loads(ln)) for ln in lines[1:]]


@dataclass
class TaskMetrics:
    task_id: int
    jobs_released: int = 0
    jobs_completed: int = 0
    deadline_misses: int = 0
    max_tardiness: int = 0
    response_sum: int = 0
    response_max: int = 0

    @property
    def response_mean(self) -> float:
        return self.response_sum / self.jobs_completed if self.jobs_completed else 0.0

    def add_completion(self, arrival: int, deadline: int, finish: int):
        self.jobs_completed += 1
        if finish > deadline:
            self.deadline_misses += 1
            self.max_tardiness = max(self.max_tardiness, finish - deadline)
        resp = finish - arrival
        self.response_sum += resp
        self.response_max = max(self.response_max, resp)

    def merge(self, other: "TaskMetrics") -> "TaskMetrics":
        return TaskMetrics(
            self.task_id,
            self.jobs_released + other.jobs_released,
            self.jobs_completed + other.jobs_completed,
            self.deadline_misses + other.deadline_misses,
            max(self.max_tardiness, other.max_tardiness),
            self.response_sum + other.response_sum,
            max(self.response_max, other.response_max),
        )


@dataclass
class RunMetrics:
    """Aggregate statistics. Jobs still pending at the horizon are left out of
    both the miss count and its denominator (``jobs_completed``)."""

    tasks: Dict[int, TaskMetrics] = field(default_factory=dict)
    migrations: int = 0
    preemptions: int = 0
    busy_time: int = 0
    # integral of the applied depletion rate over execution time
    rate_time: Fraction = Fraction(0)
    budget_consumed: Union[int, Fraction] = 0
    server_deadline_misses: int = 0

    def task(self, task_id: int) -> TaskMetrics:
        if task_id not in self.tasks:
            self.tasks[task_id] = TaskMetrics(task_id)
        return self.tasks[task_id]

    @property
    def jobs_released(self) -> int:
        return sum(t.jobs_released for t in self.tasks.values())

    @property
    def jobs_completed(self) -> int:
        return sum(t.jobs_completed for t in self.tasks.values())

    @property
    def deadline_misses(self) -> int:
        return sum(t.deadline_misses for t in self.tasks.values())

    @property
    def miss_pct(self) -> float:
        done = self.jobs_completed
        return 100.0 * self.deadline_misses / done if done else 0.0

    @property
    def mean_rate(self) -> float:
        return float(self.rate_time / self.busy_time) if self.busy_time else 1.0

    @property
    def reclaimed_time(self) -> Fraction:
        return self.busy_time - Fraction(self.rate_time)

    def merge(self, other: "RunMetrics") -> "RunMetrics":
        tasks = {k: TaskMetrics(**vars(v)) for k, v in self.tasks.items()}
        for k, v in other.tasks.items():
            tasks[k] = tasks[k].merge(v) if k in tasks else TaskMetrics(**vars(v))
        return RunMetrics(tasks, self.migrations + other.migrations,
                          self.preemptions + other.preemptions,
                          self.busy_time + other.busy_time,
                          Fraction(self.rate_time) + Fraction(other.rate_time),
                          self.budget_consumed + other.budget_consumed,
                          self.server_deadline_misses + other.server_deadline_misses)

    def counters(self) -> dict:
        """Comparable view used for double-entry checks."""
        return {
            "tasks": {k: vars(v) for k, v in sorted(self.tasks.items())},
            "migrations": self.migrations,
            "preemptions": self.preemptions,
            "busy_time": self.busy_time,
            "budget_consumed": self.budget_consumed,
        }


def aggregate(runs: Iterable[RunMetrics]) -> RunMetrics:
    total = RunMetrics()
    for r in runs:
        total = total.merge(r)
    return total


def summarize(trace: Sequence[TraceRecord], tasks=()) -> RunMetrics:
    """Rebuild run statistics from a trace alone."""
    out = RunMetrics()
    for t in tasks:
        out.task(t.id)
    for rec in trace:
        if rec.kind == "arrival":
            out.task(rec.server_id).jobs_released += 1
        elif rec.kind == "completion":
            out.task(rec.server_id).add_completion(rec.job_arrival, rec.job_deadline, rec.time)
        elif rec.kind == "dispatch" and rec.migrated:
            out.migrations += 1
        elif rec.kind == "preempt":
            out.preemptions += 1
        elif rec.kind == "exec":
            out.busy_time += rec.duration
            out.rate_time += Fraction(rec.rate) * rec.duration
            out.budget_consumed += rec.consumed
    return out


METRICS_COLUMNS = ["jobs_released", "jobs_completed", "deadline_misses", "miss_pct",
                   "migrations", "preemptions", "busy_time_ns", "mean_rate",
                   "reclaimed_time_ns", "budget_consumed_ns"]
TASK_COLUMNS = ["task_id", "jobs_released", "jobs_completed", "deadline_misses",
                "max_tardiness_ns", "response_mean_ns", "response_max_ns"]


def metrics_row(m: RunMetrics) -> dict:
    return {
        "jobs_released": m.jobs_released,
        "jobs_completed": m.jobs_completed,
        "deadline_misses": m.deadline_misses,
        "miss_pct": f"{m.miss_pct:.6f}",
        "migrations": m.migrations,
        "preemptions": m.preemptions,
        "busy_time_ns": m.busy_time,
        "mean_rate": f"{m.mean_rate:.9f}",
        "reclaimed_time_ns": f"{float(m.reclaimed_time):.3f}",
        "budget_consumed_ns": f"{float(m.budget_consumed):.3f}",
    }


def write_metrics_csv(path_or_file, m: RunMetrics):
    """Two CSV blocks: one global row, then one row per task."""
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
    try:
        w = csv.DictWriter(fh, METRICS_COLUMNS)
        w.writeheader()
        w.writerow(metrics_row(m))
        fh.write("\n")
        w = csv.DictWriter(fh, TASK_COLUMNS)
        w.writeheader()
        for tid, t in sorted(m.tasks.items()):
            w.writerow({
                "task_id": tid, "jobs_released": t.jobs_released,
                "jobs_completed": t.jobs_completed, "deadline_misses": t.deadline_misses,
                "max_tardiness_ns": t.max_tardiness,
                "response_mean_ns": f"{t.response_mean:.3f}",
                "response_max_ns": t.response_max,
            })
    finally:
        if own:
            fh.close()


def metrics_csv_text(m: RunMetrics) -> str:
    buf = io.StringIO()
    write_metrics_csv(buf, m)
    return buf.getvalue()
