"""Domain types and the CBS/GRUB server state machine.

Times are integer nanoseconds. Bandwidths and budgets are exact (``int`` or
``Fraction``) so that boundary conditions (zero-lag, admission equalities) are decided without
rounding. The engine owns the clock; the functions here only apply one rule
edge at a time and report which edge fired.
"""

from __future__ import annotations

import enum
import functools
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Deque, List, Optional, Sequence, Union

# Absolute tolerance for time comparisons, in simulation time units (ns).
# Engine arithmetic is exact, so this only matters for float-valued oracles.
TIME_TOL = 1e-9


class ConfigError(ValueError):
    """Invalid task, server or system configuration."""


class EngineInvariantError(RuntimeError):
    """An internal scheduling invariant was violated."""


class AdmissionRejected(Exception):
    """The server set does not pass the configured admission policy."""

    def __init__(self, message, verdict=None):
        super().__init__(message)
        self.verdict = verdict


class State(str, enum.Enum):
    INACTIVE = "Inactive"
    ACTIVE_CONTENDING = "ActiveContending"
    ACTIVE_NON_CONTENDING = "ActiveNonContending"
    RECHARGING = "Recharging"


class Mode(str, enum.Enum):
    NONE = "none"
    PARALLEL = "parallel"
    SEQUENTIAL = "sequential"


class Policy(str, enum.Enum):
    GFB = "gfb"
    BCL = "bcl"
    GFB_OR_BCL = "gfb-or-bcl"
    OFF = "off"


# Allowed (from, to) pairs for each rule edge.
RULE_EDGES = {
    "1": (State.INACTIVE, State.ACTIVE_CONTENDING),
    "2a": (State.ACTIVE_CONTENDING, State.ACTIVE_CONTENDING),
    "2b": (State.ACTIVE_CONTENDING, State.ACTIVE_NON_CONTENDING),
    "2c": (State.ACTIVE_CONTENDING, State.RECHARGING),
    "3": (State.RECHARGING, State.ACTIVE_CONTENDING),
    "4": (State.ACTIVE_NON_CONTENDING, State.ACTIVE_CONTENDING),
    "5": (State.ACTIVE_NON_CONTENDING, State.INACTIVE),
}


def as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class FixedExec:
    c: int

    def bounds(self):
        return self.c, self.c


@dataclass(frozen=True)
class UniformExec:
    lo: int
    hi: int

    def bounds(self):
        return self.lo, self.hi


ExecModel = Union[FixedExec, UniformExec]


@dataclass(frozen=True)
class TaskSpec:
    id: int
    period_T: int
    exec_model: ExecModel
    kind: str = "periodic"
    rel_deadline_D: Optional[int] = None
    arrival_offset: int = 0
    # mean of the exponential extra gap for sporadic tasks (ns)
    jitter_mean: int = 0

    def __post_init__(self):
        if self.kind not in ("periodic", "sporadic"):
            raise ConfigError(f"task {self.id}: unknown kind {self.kind!r}")
        if self.period_T <= 0:
            raise ConfigError(f"task {self.id}: period must be > 0")
        if self.rel_deadline_D is None:
            object.__setattr__(self, "rel_deadline_D", self.period_T)
        if self.rel_deadline_D <= 0:
            raise ConfigError(f"task {self.id}: relative deadline must be > 0")
        lo, hi = self.exec_model.bounds()
        if not 0 < lo <= hi:
            raise ConfigError(f"task {self.id}: execution bounds need 0 < lo <= hi")
        if self.arrival_offset < 0 or self.jitter_mean < 0:
            raise ConfigError(f"task {self.id}: negative offset or jitter")


@dataclass
class Job:
    task_id: int
    index: int
    arrival: int
    exec_total: int
    abs_deadline: int
    exec_remaining: int = -1
    finish: Optional[int] = None

    def __post_init__(self):
        if self.exec_remaining < 0:
            self.exec_remaining = self.exec_total


@dataclass(frozen=True)
class ServerParams:
    """Static reservation. ``max_budget_Q`` is stored; ``bandwidth_U`` is derived."""

    id: int
    period_P: int
    max_budget_Q: int

    def __post_init__(self):
        if self.period_P <= 0:
            raise ConfigError(f"server {self.id}: period must be > 0")
        if not 0 < self.max_budget_Q <= self.period_P:
            raise ConfigError(f"server {self.id}: need 0 < Q <= P (bandwidth in (0, 1])")

    @functools.cached_property
    def bandwidth_U(self) -> Fraction:
        return Fraction(self.max_budget_Q, self.period_P)

    @classmethod
    def from_any(cls, id, Q=None, P=None, U=None) -> "ServerParams":
        """Build from any two of (Q, P, U); a third given value is cross-checked."""
        given = sum(v is not None for v in (Q, P, U))
        if given < 2:
            raise ConfigError(f"server {id}: need two of Q, P, U")
        if U is not None:
            U = as_fraction(U)
            if not 0 < U <= 1:
                raise ConfigError(f"server {id}: bandwidth must be in (0, 1]")
        if Q is None:
            Q = math.floor(U * P)
        elif P is None:
            P = math.ceil(Q / U)
        params = cls(id, int(P), int(Q))
        if U is not None and abs(float(params.bandwidth_U - U)) * params.period_P > 1:
            raise ConfigError(f"server {id}: Q/P/U inconsistent")
        return params


@dataclass
class ServerState:
    params: ServerParams
    state: State = State.INACTIVE
    # exact remaining budget; fractional once a reclaiming rate applied
    budget_q: Union[int, Fraction] = 0
    deadline_d: int = 0
    # processor holding this server's donated bandwidth (sequential mode)
    stored_cpu: Optional[int] = None
    # bandwidth currently counted in the reclaimable pool
    donated: bool = False
    last_cpu: Optional[int] = None
    pending_jobs: Deque[Job] = field(default_factory=deque)

    @property
    def id(self):
        return self.params.id

    @property
    def U(self) -> Fraction:
        return self.params.bandwidth_U


@dataclass
class ReclaimState:
    mode: Mode
    m: int
    global_uinact: Fraction = Fraction(0)
    per_cpu_uinact: List[Fraction] = field(default_factory=list)

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if not self.per_cpu_uinact:
            self.per_cpu_uinact = [Fraction(0)] * self.m

    def snapshot(self):
        if self.mode is Mode.SEQUENTIAL:
            return tuple(self.per_cpu_uinact)
        return self.global_uinact

    def deposit(self, server: ServerState, cpu: Optional[int]):
        if self.mode is Mode.NONE:
            return
        if self.mode is Mode.PARALLEL:
            self.global_uinact += server.U
        else:
            if cpu is None:
                raise EngineInvariantError(f"server {server.id}: no processor to store bandwidth on")
            self.per_cpu_uinact[cpu] += server.U
            server.stored_cpu = cpu
        server.donated = True

    def withdraw(self, server: ServerState):
        if self.mode is Mode.NONE or not server.donated:
            return
        if self.mode is Mode.PARALLEL:
            self.global_uinact -= server.U
        else:
            self.per_cpu_uinact[server.stored_cpu] -= server.U
        server.donated = False


@dataclass
class SystemConfig:
    m: int = 4
    mode: Mode = Mode.NONE
    init_reclaim: bool = False
    admission: Policy = Policy.OFF
    horizon: Optional[int] = None
    seed: int = 0
    epsilon_margin: Fraction = Fraction(1, 10**6)
    # BCL condition (b) as printed; disable to use condition (a) alone
    bcl_condition_b: bool = True

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.admission = Policy(self.admission)
        self.epsilon_margin = as_fraction(self.epsilon_margin)
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.horizon is not None and self.horizon <= 0:
            raise ConfigError("horizon must be > 0")
        if not 0 < self.epsilon_margin < 1:
            raise ConfigError("epsilon_margin must be in (0, 1)")


def default_horizon(servers: Sequence[ServerParams]) -> int:
    return 1000 * max((s.period_P for s in servers), default=1)


# ---------------------------------------------------------------------------
# rule edges


def on_arrival(server: ServerState, job: Job, now: int, reclaim: Optional[ReclaimState] = None):
    """Queue ``job``; returns the rule that fired ("1", "4") or None."""
    if job.arrival != now:
        raise EngineInvariantError(
            f"server {server.id}: job {job.index} arrives at {job.arrival}, clock is {now}")
    server.pending_jobs.append(job)
    if server.state is State.INACTIVE:
        server.budget_q = server.params.max_budget_Q
        server.deadline_d = now + server.params.period_P
        server.state = State.ACTIVE_CONTENDING
        if reclaim is not None:
            reclaim.withdraw(server)
        return "1"
    if server.state is State.ACTIVE_NON_CONTENDING:
        server.state = State.ACTIVE_CONTENDING
        return "4"
    return None


def compute_zero_lag(server: ServerState) -> Fraction:
    """Earliest t with q >= (d - t) U."""
    if server.state is not State.ACTIVE_NON_CONTENDING:
        raise EngineInvariantError(f"server {server.id}: zero-lag asked in state {server.state.value}")
    return server.deadline_d - Fraction(server.budget_q) / server.U


def rule5_reached(server: ServerState, now) -> bool:
    return server.budget_q >= (server.deadline_d - now) * server.U


def on_job_completion(server: ServerState, now: int, reclaim: Optional[ReclaimState] = None,
                      cpu: Optional[int] = None, defer_rule5: bool = False) -> List[str]:
    """Dequeue the finished head job. Returns the fired rules in order.

    When the rule-5 condition already holds at the completion instant the
    server goes straight through ActiveNonContending to Inactive. With
    ``defer_rule5`` the result still reports "5" but the server is left
    ActiveNonContending for the caller to finish with ``on_zero_lag``.
    """
    if server.state is not State.ACTIVE_CONTENDING or not server.pending_jobs:
        raise EngineInvariantError(f"server {server.id}: completion while {server.state.value}")
    job = server.pending_jobs[0]
    if job.exec_remaining != 0:
        raise EngineInvariantError(f"server {server.id}: job {job.index} not finished")
    server.pending_jobs.popleft()
    job.finish = now
    if server.pending_jobs:
        return ["2a"]
    server.state = State.ACTIVE_NON_CONTENDING
    if rule5_reached(server, now):
        if not defer_rule5:
            on_zero_lag(server, now, reclaim, cpu)
        return ["2b", "5"]
    return ["2b"]


def on_budget_exhausted(server: ServerState, now: int) -> int:
    """Throttle the server; returns the replenishment instant."""
    if server.state is not State.ACTIVE_CONTENDING or not server.pending_jobs:
        raise EngineInvariantError(f"server {server.id}: exhaustion while {server.state.value}")
    if server.budget_q != 0:
        raise EngineInvariantError(f"server {server.id}: exhausted with q={server.budget_q}")
    server.state = State.RECHARGING
    # only reachable past d for non-admitted sets; replenish immediately then
    return max(server.deadline_d, now)


def on_replenishment(server: ServerState, now: Optional[int] = None) -> str:
    if server.state is not State.RECHARGING:
        raise EngineInvariantError(f"server {server.id}: replenishment while {server.state.value}")
    if now is not None and now < server.deadline_d:
        raise EngineInvariantError(f"server {server.id}: replenished before its deadline")
    server.deadline_d += server.params.period_P
    server.budget_q = server.params.max_budget_Q
    server.state = State.ACTIVE_CONTENDING
    return "3"


def on_zero_lag(server: ServerState, now, reclaim: Optional[ReclaimState] = None,
                cpu_hint: Optional[int] = None) -> Optional[str]:
    """Rule 5. Stale timers (server no longer non-contending) are ignored."""
    if server.state is not State.ACTIVE_NON_CONTENDING:
        return None
    server.state = State.INACTIVE
    if reclaim is not None:
        cpu = cpu_hint if cpu_hint is not None else server.last_cpu
        reclaim.deposit(server, cpu)
    return "5"
