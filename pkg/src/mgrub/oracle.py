"""Slow, independent reference implementations used as test oracles.

* ``cbs_reference`` / ``grub_reference``: a flat, scan-everything exact
  simulator written without the engine's event queue or the ``model``
  transition functions. It supports the plain CBS budget rule and the
  uniprocessor-style GRUB rule dq/dt = -(1 - (U_sys - U_act)).
* ``quantum_sim``: a float-valued fixed-quantum discretization of the
  reclaiming algorithms; with ``tick_accounting`` it also defers budget
  exhaustion to quantum boundaries, like tick-based kernel accounting.
* ``track_virtual_time``: rebuilds V_i(t) = d_i - q_i/U_i (or t when
  Inactive) from a trace and flags decreases, jumps and server lag.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from . import admission
from .metrics import TraceRecord
from .model import Mode, ServerParams, SystemConfig, TaskSpec, default_horizon
from .workload import release_jobs

IN, AC, ANC, RC = "Inactive", "ActiveContending", "ActiveNonContending", "Recharging"

# canonical transition row: (time, server, rule, q, d, state, job)
Row = Tuple[int, int, Optional[str], int, int, str, Optional[int]]


def canonical(trace: Iterable[TraceRecord]) -> List[Row]:
    """State-machine rows of an engine trace, ordered by (time, server)."""
    rows = [(r.time, r.server_id, r.rule, r.q, r.d, r.state, r.job)
            for r in trace if r.kind in ("arrival", "completion", "exhausted",
                                         "replenishment", "zerolag")]
    return sorted(rows, key=lambda x: (x[0], x[1]))


# ---------------------------------------------------------------------------
# exact reference simulator


class _Srv:
    def __init__(self, p: ServerParams):
        self.id = p.id
        self.Q, self.P = p.max_budget_Q, p.period_P
        self.U = Fraction(p.max_budget_Q, p.period_P)
        self.state = IN
        self.q = 0
        self.d = 0
        self.jobs = deque()


def _reference(config: SystemConfig, tasks, servers, rule: str, u_sys=1) -> List[Row]:
    m = config.m
    horizon = config.horizon or default_horizon(servers)
    srv = {p.id: _Srv(p) for p in servers}
    ids = sorted(srv)
    releases = {t.id: deque(release_jobs(t, horizon, config.seed)) for t in tasks}
    remaining = {}
    zl = {}
    running = set()
    log: List[Row] = []
    t = 0

    def emit(s, rule_, job=None):
        log.append((t, s.id, rule_, s.q, s.d, s.state, job))

    def rate():
        if rule == "cbs":
            return 1
        u_act = sum((s.U for s in srv.values() if s.state != IN), Fraction(0))
        return 1 - (u_sys - u_act)

    def exhaust_all():
        for i in ids:
            s = srv[i]
            if s.state == AC and s.q == 0:
                s.state = RC
                running.discard(i)
                emit(s, "2c")

    while True:
        # candidate next instants
        cands = []
        for i in ids:
            s = srv[i]
            if releases[i]:
                cands.append(releases[i][0].arrival)
            if s.state == RC:
                cands.append(max(s.d, t))
            if s.state == ANC:
                cands.append(zl[i])
        r = rate()
        if any(srv[i].q < r for i in running):
            for i in running:
                if srv[i].q < r:
                    srv[i].q = 0
            exhaust_all()
            order = sorted((s for s in srv.values() if s.state == AC), key=lambda s: (s.d, s.id))
            running = {s.id for s in order[:m]}
            continue
        for i in running:
            s = srv[i]
            head = s.jobs[0]
            cands.append(t + remaining[(i, head.index)])
            cands.append(t + math.floor(Fraction(s.q) / r))
        if not cands:
            break
        nxt = min(cands)
        if nxt > horizon:
            break
        dt = nxt - t
        for i in running:
            s = srv[i]
            s.q = Fraction(s.q) - r * dt
            s.q = int(s.q) if s.q.denominator == 1 else s.q
            if s.q < r:
                s.q = 0
            remaining[(i, s.jobs[0].index)] -= dt
        t = nxt
        # completions
        for i in sorted(running):
            s = srv[i]
            head = s.jobs[0]
            if remaining[(i, head.index)] > 0:
                continue
            s.jobs.popleft()
            if s.jobs:
                emit(s, "2a", head.index)
                continue
            s.state = ANC
            running.discard(i)
            emit(s, "2b", head.index)
            lag_point = s.d - Fraction(s.q) / s.U
            if lag_point <= t:
                s.state = IN
                emit(s, "5")
            else:
                zl[i] = math.ceil(lag_point)
        exhaust_all()
        for i in ids:
            s = srv[i]
            if s.state == ANC and zl[i] == t:
                s.state = IN
                emit(s, "5")
        for i in ids:
            s = srv[i]
            if s.state == RC and max(s.d, t) == t:
                s.d += s.P
                s.q = s.Q
                s.state = AC
                emit(s, "3")
        for i in ids:
            s = srv[i]
            if releases[i] and releases[i][0].arrival == t:
                job = releases[i].popleft()
                remaining[(i, job.index)] = job.exec_total
                s.jobs.append(job)
                if s.state == IN:
                    s.q, s.d, s.state = s.Q, t + s.P, AC
                    emit(s, "1", job.index)
                elif s.state == ANC:
                    s.state = AC
                    emit(s, "4", job.index)
                else:
                    emit(s, None, job.index)
        exhaust_all()
        order = sorted((s for s in srv.values() if s.state == AC), key=lambda s: (s.d, s.id))
        running = {s.id for s in order[:m]}
    return sorted(log, key=lambda x: (x[0], x[1]))


def cbs_reference(config: SystemConfig, tasks: Sequence[TaskSpec],
                  servers: Sequence[ServerParams]) -> List[Row]:
    """Plain multiprocessor CBS (every executing budget drains at rate 1)."""
    return _reference(config, tasks, servers, "cbs")


def grub_reference(config: SystemConfig, tasks: Sequence[TaskSpec],
                   servers: Sequence[ServerParams], u_sys=1) -> List[Row]:
    """GRUB with a global active-utilization rule; only meaningful for m = 1."""
    return _reference(config, tasks, servers, "grub", Fraction(u_sys))


# ---------------------------------------------------------------------------
# quantum-stepped simulator


@dataclass
class QEvent:
    time: float
    kind: str
    server_id: int
    q: float
    d: float
    state: str


@dataclass
class QuantumResult:
    events: List[QEvent]
    completions: Dict[int, List[Tuple[float, int]]] = field(default_factory=dict)
    misses: int = 0
    completed: int = 0
    max_overrun: float = 0.0


def quantum_sim(config: SystemConfig, tasks: Sequence[TaskSpec], servers: Sequence[ServerParams],
                quantum: float, tick_accounting: bool = False) -> QuantumResult:
    """Step the whole system in fixed quanta.

    Arrivals, replenishments and zero-lag transitions are only noticed at
    quantum boundaries. Completions and exhaustions happen at their exact
    instant inside the quantum and trigger an immediate G-EDF re-dispatch.
    With ``tick_accounting`` the reclaimable pool is sampled once per quantum
    and a budget can only run out at a boundary, so a server may overrun by up
    to one quantum.
    """
    if quantum <= 0:
        raise ValueError("quantum must be > 0")
    m = config.m
    mode = Mode(config.mode)
    horizon = config.horizon or default_horizon(servers)
    eps = 1e-6
    params = sorted(servers, key=lambda s: s.id)
    st = {p.id: {"Q": float(p.max_budget_Q), "P": float(p.period_P), "U": p.max_budget_Q / p.period_P,
                 "state": IN, "q": 0.0, "d": 0.0, "jobs": deque(), "last": None, "stored": None,
                 "zl": None, "overrun": 0.0} for p in params}
    g = 0.0
    per = [0.0] * m
    if mode is Mode.PARALLEL and config.init_reclaim:
        g = float(admission.init_uinact_parallel(params, m))
    if mode is Mode.SEQUENTIAL and config.init_reclaim:
        per = [float(admission.init_uinact_sequential(params, m, config.epsilon_margin,
                                                      config.bcl_condition_b))] * m
    for k, p in enumerate(params):
        if mode is Mode.PARALLEL:
            g += st[p.id]["U"]
        elif mode is Mode.SEQUENTIAL:
            per[k % m] += st[p.id]["U"]
            st[p.id]["stored"] = k % m
    releases = {t.id: deque(release_jobs(t, horizon, config.seed)) for t in tasks}
    running: List[Optional[int]] = [None] * m
    res = QuantumResult(events=[])

    def log(t, kind, i):
        s = st[i]
        res.events.append(QEvent(t, kind, i, s["q"], s["d"], s["state"]))

    def deposit(i, cpu):
        nonlocal g
        if mode is Mode.PARALLEL:
            g += st[i]["U"]
        elif mode is Mode.SEQUENTIAL:
            per[cpu] += st[i]["U"]
            st[i]["stored"] = cpu

    def withdraw(i):
        nonlocal g
        if mode is Mode.PARALLEL:
            g -= st[i]["U"]
        elif mode is Mode.SEQUENTIAL:
            per[st[i]["stored"]] -= st[i]["U"]

    def stop(cpu):
        st[running[cpu]]["last"] = cpu
        running[cpu] = None

    def exhaust(i, t):
        s = st[i]
        s["q"] = 0.0
        s["state"] = RC
        log(t, "exhausted", i)

    def complete(i, t, cpu):
        s = st[i]
        job = s["jobs"].popleft()
        res.completed += 1
        if t > job[2] + eps:
            res.misses += 1
        res.completions.setdefault(i, []).append((t, job[3]))
        if s["jobs"]:
            log(t, "completion", i)
            return True
        s["state"] = ANC
        log(t, "completion", i)
        s["zl"] = s["d"] - s["q"] / s["U"]
        if s["zl"] <= t + eps:
            s["state"] = IN
            deposit(i, cpu)
            log(t, "zerolag", i)
        return False

    def pool():
        return [g / m] * m if mode is Mode.PARALLEL else list(per)

    def dispatch():
        order = sorted((i for i in st if st[i]["state"] == AC), key=lambda i: (st[i]["d"], i))
        chosen = set(order[:m])
        for cpu in range(m):
            if running[cpu] is not None and running[cpu] not in chosen:
                stop(cpu)
        for i in order[:m]:
            if i not in running:
                running[running.index(None)] = i

    def rate(i, frozen):
        if mode is Mode.NONE:
            return 1.0
        return min(1.0, max(st[i]["U"], 1.0 - frozen))

    steps = int(math.ceil(horizon / quantum))
    for k in range(steps + 1):
        t = k * quantum
        if t > horizon + eps:
            break
        for i in st:
            s = st[i]
            if s["state"] == ANC and s["zl"] <= t + eps:
                s["state"] = IN
                deposit(i, s["last"])
                log(t, "zerolag", i)
        for i in st:
            s = st[i]
            if s["state"] == RC and s["d"] <= t + eps:
                s["d"] += s["P"]
                s["q"] = s["Q"]
                s["state"] = AC
                log(t, "replenishment", i)
        for i in st:
            s = st[i]
            rel = releases[i]
            while rel and rel[0].arrival <= t + eps:
                job = rel.popleft()
                s["jobs"].append([float(job.exec_total), float(job.arrival),
                                  float(job.abs_deadline), job.index])
                if s["state"] == IN:
                    s["q"], s["d"], s["state"] = s["Q"], job.arrival + s["P"], AC
                    withdraw(i)
                elif s["state"] == ANC:
                    s["state"] = AC
                log(t, "arrival", i)
        for i in sorted(st):
            s = st[i]
            if s["state"] == AC and s["q"] <= eps:
                if i in running:
                    stop(running.index(i))
                exhaust(i, t)
        if t >= horizon - eps:
            break
        now, end = t, t + quantum
        sampled = pool()
        while True:
            dispatch()
            # tick accounting samples the pool once per quantum
            frozen = sampled if tick_accounting else pool()
            rates = {cpu: rate(i, frozen[cpu]) for cpu, i in enumerate(running) if i is not None}
            nxt = end
            for cpu, r in rates.items():
                s = st[running[cpu]]
                nxt = min(nxt, now + s["jobs"][0][0])
                if not tick_accounting:
                    nxt = min(nxt, now + s["q"] / r)
            dt = nxt - now
            for cpu, r in rates.items():
                s = st[running[cpu]]
                s["jobs"][0][0] -= dt
                s["q"] -= r * dt
            now = nxt
            if now >= end - eps:
                break
            for cpu in sorted(rates, key=lambda c: running[c]):
                i = running[cpu]
                if st[i]["jobs"][0][0] <= eps:
                    st[i]["jobs"][0][0] = 0.0
                    if not complete(i, now, cpu):
                        stop(cpu)
            for cpu in sorted(rates, key=lambda c: running[c] if running[c] is not None else -1):
                i = running[cpu]
                if i is not None and not tick_accounting and st[i]["q"] <= eps:
                    stop(cpu)
                    exhaust(i, now)
        for cpu in range(m):
            i = running[cpu]
            if i is None:
                continue
            s = st[i]
            if s["jobs"][0][0] <= eps:
                s["jobs"][0][0] = 0.0
                if not complete(i, end, cpu):
                    stop(cpu)
                    continue
            if s["q"] <= eps:
                if tick_accounting:
                    res.max_overrun = max(res.max_overrun, -s["q"] / rates.get(cpu, 1.0))
                stop(cpu)
                exhaust(i, end)
    return res


@dataclass
class Divergence:
    max_time: float
    max_budget: float
    compared: int
    mismatch: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.mismatch is None


def compare_to_quantum(trace: Sequence[TraceRecord], qres: QuantumResult, horizon: int,
                       quantum: float) -> Divergence:
    """Pair events by (server, kind, ordinal) and report the largest time and
    budget differences. Events within a few quanta of the horizon are ignored."""
    kinds = ("arrival", "completion", "exhausted", "replenishment", "zerolag")
    eng = defaultdict(list)
    for r in trace:
        if r.kind in kinds:
            eng[(r.server_id, r.kind)].append((r.time, r.q))
    qs = defaultdict(list)
    for e in qres.events:
        qs[(e.server_id, e.kind)].append((e.time, e.q))
    cut_e, cut_q = horizon - 4 * quantum, horizon - 8 * quantum
    max_t = max_q = 0.0
    n = 0
    for key in sorted(set(eng) | set(qs)):
        a = [x for x in eng.get(key, []) if x[0] <= cut_e]
        b = qs.get(key, [])
        if len(b) < len(a) or sum(1 for x in b if x[0] <= cut_q) > len(a):
            return Divergence(max_t, max_q, n, f"event count differs for {key}: "
                              f"engine {len(a)} vs quantum {len(b)}")
        for (ta, qa), (tb, qb) in zip(a, b):
            max_t = max(max_t, abs(ta - tb))
            max_q = max(max_q, abs(qa - qb))
            n += 1
    return Divergence(max_t, max_q, n)


# ---------------------------------------------------------------------------
# virtual time


class TraceParseError(ValueError):
    pass


def _vtime(state, q, d, t, U) -> Fraction:
    if state == IN:
        return Fraction(t)
    return d - Fraction(q) / U


@dataclass
class VirtualTimeReport:
    series: Dict[int, List[Tuple[int, Fraction]]]
    violations: List[str]
    # upward resets to v = t when a lagging server completes its last job
    catchups: int = 0


class VirtualTimeTracker:
    """Streaming reconstruction of V_i(t) from trace records.

    A server that was preempted while contending can finish its last job
    with v < t, already past its zero-lag point; it then goes Inactive at
    the completion instant and v resets upward to t. The dedicated
    uniform processor was idle over [v, t], so this is the idle-interval
    ambiguity of the definition rather than a discontinuity. Such resets
    are counted in ``catchups``; every other jump is a violation.
    """

    def __init__(self, servers: Sequence[ServerParams], tol=1, keep_series: bool = True):
        self.U = {s.id: s.bandwidth_U for s in servers}
        self.tol = tol
        self.keep = keep_series
        self.series: Dict[int, List[Tuple[int, Fraction]]] = defaultdict(list)
        self.last: Dict[int, Fraction] = {}
        self.violations: List[str] = []
        self.catchups = 0
        self._idle_at: Dict[int, int] = {}

    def _point(self, sid, t, v):
        prev = self.last.get(sid)
        if prev is not None and v < prev - self.tol:
            self.violations.append(f"t={t} server {sid}: virtual time decreased {float(prev)} -> {float(v)}")
        self.last[sid] = v
        if self.keep:
            self.series[sid].append((t, v))

    def __call__(self, rec: TraceRecord):
        if rec.server_id is None or rec.state is None:
            return
        sid = rec.server_id
        if sid not in self.U or rec.q is None or rec.d is None:
            raise TraceParseError(f"malformed record: {rec}")
        U = self.U[sid]
        t = rec.time
        after = _vtime(rec.state, rec.q, rec.d, t, U)
        if rec.from_state is not None:
            if rec.q_prev is None or rec.d_prev is None:
                raise TraceParseError(f"transition without previous values: {rec}")
            before = _vtime(rec.from_state, rec.q_prev, rec.d_prev, t, U)
            self._point(sid, t, before)
            catchup = (rec.rule == "5" and self._idle_at.get(sid) == t and before < after)
            if rec.rule == "2b":
                self._idle_at[sid] = t
            if catchup:
                self.catchups += 1
            elif abs(after - before) > self.tol:
                self.violations.append(
                    f"t={t} server {sid}: virtual time jumps {float(before)} -> {float(after)} (rule {rec.rule})")
        self._point(sid, t, after)
        if rec.state == AC and t > rec.d and rec.q > 0:
            self.violations.append(f"t={t} server {sid}: budget {rec.q} left past server deadline {rec.d}")
        if rec.state == RC and t > rec.d:
            self.violations.append(f"t={t} server {sid}: still recharging past deadline {rec.d}")


def track_virtual_time(trace: Iterable[TraceRecord], servers: Sequence[ServerParams],
                       tol=1) -> VirtualTimeReport:
    tracker = VirtualTimeTracker(servers, tol)
    for rec in trace:
        tracker(rec)
    return VirtualTimeReport(dict(tracker.series), tracker.violations, tracker.catchups)
