"""Exact event-driven Global-EDF simulation of CBS/GRUB servers with
parallel or sequential bandwidth reclaiming.

Between two consecutive event instants every depletion rate is constant, so
budgets are integrated exactly: budgets are exact rationals and an interval
of ``dt`` ns at rate ``r`` consumes exactly ``r * dt``. Event instants are
integers, so a budget is exhausted at the last whole ns it fully pays for,
``floor(q / r)``; the sub-ns residual left at that point is discarded. A
server therefore never executes beyond its exact budget.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from . import admission
from .metrics import RunMetrics, TraceRecord
from .model import (
    AdmissionRejected, ConfigError, EngineInvariantError, Job, Mode, Policy,
    ReclaimState, ServerParams, ServerState, State, SystemConfig, TaskSpec,
    compute_zero_lag, default_horizon, on_arrival, on_budget_exhausted,
    on_job_completion, on_replenishment, on_zero_lag,
)
from .workload import release_jobs

# same-instant processing order
ZERO_LAG, REPLENISH, ARRIVAL = 2, 3, 4

Sink = Callable[[TraceRecord], None]


def depletion_rate(mode, U_i, reclaim: Optional[ReclaimState], cpu: int, m: int):
    mode = Mode(mode)
    if mode is Mode.NONE:
        return 1
    if mode is Mode.PARALLEL:
        r = max(U_i, 1 - reclaim.global_uinact / m)
    else:
        r = max(U_i, 1 - reclaim.per_cpu_uinact[cpu])
    return min(r, 1)


def _norm(x):
    if isinstance(x, Fraction) and x.denominator == 1:
        return int(x)
    return x


def consumption(rate, dt: int):
    return _norm(rate * dt)


def exhaustion_delay(q, rate) -> int:
    """Last integer dt with rate * dt <= q; 0 means q cannot pay for one ns."""
    return math.floor(Fraction(q) / Fraction(rate))


def settle_budget(q, rate):
    """Drop a residual that cannot pay for one more ns at ``rate``."""
    return 0 if q < rate else q


@dataclass
class Prediction:
    server_id: int
    completion_at: int
    exhaustion_at: int

    @property
    def next_at(self) -> int:
        return min(self.completion_at, self.exhaustion_at)


def initial_reclaim(config: SystemConfig, servers: Sequence[ServerParams]) -> ReclaimState:
    """Pool contents at t = 0: the initialization value (if enabled) plus the
    bandwidth of every server, all of which start Inactive."""
    m = config.m
    reclaim = ReclaimState(config.mode, m)
    if config.mode is Mode.PARALLEL and config.init_reclaim:
        reclaim.global_uinact = admission.init_uinact_parallel(servers, m)
    elif config.mode is Mode.SEQUENTIAL and config.init_reclaim:
        v = admission.init_uinact_sequential(servers, m, config.epsilon_margin, config.bcl_condition_b)
        reclaim.per_cpu_uinact = [v] * m
    return reclaim


class Engine:
    def __init__(self, config: SystemConfig, tasks: Sequence[TaskSpec],
                 servers: Sequence[ServerParams], sinks: Iterable[Sink] = (),
                 record_exec: bool = True, jobs: Optional[Dict[int, List[Job]]] = None):
        self.config = config
        self.m = config.m
        self.mode = config.mode
        self.tasks = {t.id: t for t in tasks}
        params = sorted(servers, key=lambda s: s.id)
        if len({s.id for s in params}) != len(params):
            raise ConfigError("duplicate server ids")
        if set(self.tasks) != {s.id for s in params}:
            raise ConfigError("every task needs exactly one server with the same id")
        self.horizon = config.horizon or default_horizon(params)
        self.verdict = admission.admit(params, self.m, config.admission, config.bcl_condition_b)
        if not self.verdict.admitted:
            raise AdmissionRejected(f"server set rejected by {config.admission.value}", self.verdict)
        self.reclaim = initial_reclaim(config, params)
        self.uinact0 = self.reclaim.snapshot()
        self.servers: Dict[int, ServerState] = {p.id: ServerState(p) for p in params}
        for k, p in enumerate(params):
            # servers start Inactive; sequential mode spreads them round-robin
            self.reclaim.deposit(self.servers[p.id], k % self.m)
        self.sinks = list(sinks)
        self.record_exec = record_exec
        self.clock = 0
        self.running: List[Optional[int]] = [None] * self.m
        # per-cpu depletion rates, valid until the next instant is processed
        self._rates: Optional[List] = None
        self.heap: list = []
        self._seq = itertools.count()
        self._zl_token: Dict[int, int] = {sid: 0 for sid in self.servers}
        self.metrics = RunMetrics()
        if jobs is None:
            jobs = {t.id: release_jobs(t, self.horizon, config.seed) for t in tasks}
        self.jobs = jobs
        self._next_job = {tid: 0 for tid in self.tasks}
        for tid in sorted(self.tasks):
            self.metrics.task(tid)
            self._push_next_arrival(tid)

    # ------------------------------------------------------------------ events

    def _push(self, time, cls, sid, payload=None):
        heapq.heappush(self.heap, (time, cls, sid, next(self._seq), payload))

    def _push_next_arrival(self, tid):
        k = self._next_job[tid]
        if k < len(self.jobs[tid]):
            self._push(self.jobs[tid][k].arrival, ARRIVAL, tid, k)

    def _stale(self, entry) -> bool:
        _, cls, sid, _, payload = entry
        if cls == ZERO_LAG:
            return (payload != self._zl_token[sid]
                    or self.servers[sid].state is not State.ACTIVE_NON_CONTENDING)
        if cls == REPLENISH:
            return self.servers[sid].state is not State.RECHARGING
        return False

    def _emit(self, kind, srv: Optional[ServerState] = None, **kw):
        if not self.sinks:
            return
        rec = TraceRecord(time=self.clock, kind=kind, uinact=self.reclaim.snapshot()
                          if self.mode is not Mode.NONE else None, **kw)
        if srv is not None:
            rec.server_id = srv.id
            rec.q = srv.budget_q
            rec.d = srv.deadline_d
            rec.state = srv.state.value
        for sink in self.sinks:
            sink(rec)

    def _transition(self, srv, rule, prev, cpu=None, job: Optional[Job] = None, kind=None):
        kind = kind or {"1": "arrival", "4": "arrival", "2a": "completion", "2b": "completion",
                        "2c": "exhausted", "3": "replenishment", "5": "zerolag"}[rule]
        extra = {}
        if job is not None:
            extra = dict(job=job.index, job_arrival=job.arrival, job_deadline=job.abs_deadline)
        self._emit(kind, srv, cpu=cpu, rule=rule, from_state=prev[0], q_prev=prev[1],
                   d_prev=prev[2], **extra)

    # ------------------------------------------------------------- integration

    def cpu_of(self, sid) -> Optional[int]:
        for p, s in enumerate(self.running):
            if s == sid:
                return p
        return None

    def rate_on(self, srv: ServerState, cpu: int):
        return depletion_rate(self.mode, srv.U, self.reclaim, cpu, self.m)

    def current_rates(self) -> List:
        if self._rates is None:
            self._rates = [None if sid is None else self.rate_on(self.servers[sid], p)
                           for p, sid in enumerate(self.running)]
        return self._rates

    def predict_events(self) -> List[Prediction]:
        out = []
        rates = self.current_rates()
        for p, sid in enumerate(self.running):
            if sid is None:
                continue
            srv = self.servers[sid]
            job = srv.pending_jobs[0]
            out.append(Prediction(sid, self.clock + job.exec_remaining,
                                  self.clock + exhaustion_delay(srv.budget_q, rates[p])))
        return out

    def advance(self, to: int):
        if to < self.clock:
            raise EngineInvariantError(f"advance to {to} before clock {self.clock}")
        dt = to - self.clock
        if dt == 0:
            return
        rates = self.current_rates()
        for p, sid in enumerate(self.running):
            if sid is None:
                continue
            srv = self.servers[sid]
            rate = rates[p]
            job = srv.pending_jobs[0]
            if dt > exhaustion_delay(srv.budget_q, rate) or dt > job.exec_remaining:
                raise EngineInvariantError(
                    f"server {sid}: missed an event inside ({self.clock}, {to})")
            used = consumption(rate, dt)
            if self.record_exec and self.sinks:
                self._emit("exec", srv, cpu=p, duration=dt, rate=Fraction(rate), consumed=used)
            srv.budget_q = settle_budget(_norm(srv.budget_q - used), rate)
            job.exec_remaining -= dt
            self.metrics.busy_time += dt
            self.metrics.rate_time += rate * dt
            self.metrics.budget_consumed += used
        self.clock = to

    # ----------------------------------------------------------------- dispatch

    def _deschedule(self, p: int):
        sid = self.running[p]
        self.running[p] = None
        self.servers[sid].last_cpu = p

    def dispatch(self):
        contenders = sorted((s for s in self.servers.values() if s.state is State.ACTIVE_CONTENDING),
                            key=lambda s: (s.deadline_d, s.id))
        chosen = {s.id for s in contenders[:self.m]}
        for p, sid in enumerate(self.running):
            if sid is not None and sid not in chosen:
                self._deschedule(p)
                self.metrics.preemptions += 1
                self._emit("preempt", self.servers[sid], cpu=p)
        placed = {sid for sid in self.running if sid is not None}
        free = [p for p, sid in enumerate(self.running) if sid is None]
        for srv in contenders[:self.m]:
            if srv.id in placed:
                continue
            p = free.pop(0)
            job = srv.pending_jobs[0]
            migrated = (srv.last_cpu is not None and srv.last_cpu != p
                        and job.exec_remaining < job.exec_total)
            if migrated:
                self.metrics.migrations += 1
            self.running[p] = srv.id
            srv.last_cpu = p
            self._emit("dispatch", srv, cpu=p, migrated=migrated)

    # ------------------------------------------------------------------ instant

    def _snap(self, srv):
        return srv.state.value, srv.budget_q, srv.deadline_d

    def _arm_zero_lag(self, srv: ServerState):
        self._zl_token[srv.id] += 1
        at = math.ceil(compute_zero_lag(srv))
        self._push(max(at, self.clock), ZERO_LAG, srv.id, self._zl_token[srv.id])

    def _exhaust_pass(self):
        for sid in sorted(self.servers):
            srv = self.servers[sid]
            if srv.state is State.ACTIVE_CONTENDING and srv.budget_q == 0:
                prev = self._snap(srv)
                p = self.cpu_of(sid)
                if p is not None:
                    self._deschedule(p)
                at = on_budget_exhausted(srv, self.clock)
                self._transition(srv, "2c", prev, cpu=p)
                self._push(at, REPLENISH, sid)

    def process_instant(self):
        now = self.clock
        self._rates = None
        for p, sid in sorted(((p, s) for p, s in enumerate(self.running) if s is not None),
                             key=lambda x: x[1]):
            srv = self.servers[sid]
            job = srv.pending_jobs[0]
            if job.exec_remaining != 0:
                continue
            prev = self._snap(srv)
            rules = on_job_completion(srv, now, self.reclaim, p, defer_rule5=True)
            self.metrics.task(sid).add_completion(job.arrival, job.abs_deadline, now)
            self._transition(srv, rules[0], prev, cpu=p, job=job)
            if rules[0] == "2b":
                self._deschedule(p)
                if len(rules) > 1:
                    prev = self._snap(srv)
                    on_zero_lag(srv, now, self.reclaim, p)
                    self._transition(srv, "5", prev, cpu=srv.stored_cpu)
                else:
                    self._arm_zero_lag(srv)
        self._exhaust_pass()
        while self.heap and self.heap[0][0] == now:
            batch = []
            while self.heap and self.heap[0][0] == now:
                batch.append(heapq.heappop(self.heap))
            batch.sort(key=lambda e: (e[1], e[2], e[3]))
            for entry in batch:
                if self._stale(entry):
                    continue
                _, cls, sid, _, payload = entry
                srv = self.servers[sid]
                prev = self._snap(srv)
                if cls == ZERO_LAG:
                    on_zero_lag(srv, now, self.reclaim, srv.last_cpu)
                    self._transition(srv, "5", prev, cpu=srv.stored_cpu)
                elif cls == REPLENISH:
                    on_replenishment(srv, now)
                    self._transition(srv, "3", prev)
                else:
                    job = self.jobs[sid][payload]
                    self._next_job[sid] += 1
                    self._push_next_arrival(sid)
                    self.metrics.task(sid).jobs_released += 1
                    if srv.state is State.ACTIVE_NON_CONTENDING:
                        self._zl_token[sid] += 1
                    rule = on_arrival(srv, job, now, self.reclaim)
                    self._transition(srv, rule, prev, job=job, kind="arrival")
        self._exhaust_pass()
        self.dispatch()
        # a server whose rate rose while it waited may now be unable to pay
        # for a single ns; exhaust it and refill its cpu
        while True:
            self._rates = None
            rates = self.current_rates()
            short = [sid for p, sid in enumerate(self.running)
                     if sid is not None and self.servers[sid].budget_q < rates[p]]
            if not short:
                break
            for sid in short:
                self.servers[sid].budget_q = 0
            self._exhaust_pass()
            self.dispatch()
        self._rates = None

    # --------------------------------------------------------------------- run

    def step(self) -> bool:
        """Advance to the next event instant and process it. False at horizon."""
        while self.heap and self._stale(self.heap[0]):
            heapq.heappop(self.heap)
        nxt = self.heap[0][0] if self.heap else None
        for pred in self.predict_events():
            if nxt is None or pred.next_at < nxt:
                nxt = pred.next_at
        if nxt is None or nxt > self.horizon:
            if nxt is not None:
                self.advance(self.horizon)
            return False
        self.advance(nxt)
        self.process_instant()
        return True

    def run(self) -> RunMetrics:
        while self.step():
            pass
        return self.metrics


def run(config: SystemConfig, tasks: Sequence[TaskSpec], servers: Sequence[ServerParams],
        record: bool = True, sinks: Iterable[Sink] = (),
        record_exec: bool = True) -> Tuple[List[TraceRecord], RunMetrics]:
    """Simulate until the horizon and return (trace, metrics).

    With ``record=False`` the trace is empty; extra ``sinks`` still see every
    record (useful for streaming invariant checks on long runs).
    """
    trace: List[TraceRecord] = []
    sinks = list(sinks)
    if record:
        sinks.insert(0, trace.append)
    metrics = Engine(config, tasks, servers, sinks, record_exec).run()
    return trace, metrics
