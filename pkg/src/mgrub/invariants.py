"""Streaming trace checks for the scheduling invariants.

``TraceChecker`` is a trace sink: attach it to an engine run (or feed it a
recorded trace) and read ``violations`` afterwards. It rebuilds server states
and the running set from the records alone.
"""

from __future__ import annotations

from collections import Counter
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence

from .metrics import TraceRecord
from .model import RULE_EDGES, Mode, ServerParams, State
from .oracle import VirtualTimeTracker

IN = State.INACTIVE.value
AC = State.ACTIVE_CONTENDING.value
ANC = State.ACTIVE_NON_CONTENDING.value

_EDGES = {rule: (a.value, b.value) for rule, (a, b) in RULE_EDGES.items()}


def _close(a, b, tol) -> bool:
    if tol == 0:
        return a == b
    return abs(float(a) - float(b)) <= tol


class TraceChecker:
    def __init__(self, servers: Sequence[ServerParams], m: int, mode, uinact_init,
                 tol=0, check_work_conservation: bool = True, max_violations: int = 50):
        self.params = {s.id: s for s in servers}
        self.U = {s.id: s.bandwidth_U for s in servers}
        self.m = m
        self.mode = Mode(mode)
        self.tol = tol
        self.check_wc = check_work_conservation
        self.max_violations = max_violations
        self.violations: List[str] = []
        self.counts = Counter()
        self.state: Dict[int, str] = {sid: IN for sid in self.params}
        order = sorted(self.params)
        self.stored: Dict[int, Optional[int]] = {sid: k % m for k, sid in enumerate(order)}
        self.uinact_init = uinact_init
        self.running: Dict[int, int] = {}
        self.instant: Optional[int] = None
        self.last_snap = None
        self.pending_anc: Dict[int, TraceRecord] = {}
        self.vt = VirtualTimeTracker(servers, tol=1, keep_series=False)

    def fail(self, msg: str):
        self.counts["violations"] += 1
        if len(self.violations) < self.max_violations:
            self.violations.append(msg)

    @property
    def ok(self) -> bool:
        return not self.counts["violations"] and not self.vt.violations

    def all_violations(self) -> List[str]:
        return self.violations + self.vt.violations

    # ------------------------------------------------------------------

    def _expected_pool(self):
        inactive = [sid for sid, st in self.state.items() if st == IN]
        if self.mode is Mode.PARALLEL:
            return sum((self.U[s] for s in inactive), Fraction(self.uinact_init))
        per = [Fraction(x) for x in self.uinact_init]
        for s in inactive:
            per[self.stored[s]] += self.U[s]
        return tuple(per)

    def _end_instant(self):
        for sid, rec in self.pending_anc.items():
            U = self.U[sid]
            if rec.q - (rec.d - rec.time) * U >= self.tol:
                self.fail(f"t={rec.time} server {sid}: non-contending past its zero-lag time")
        self.pending_anc.clear()
        if self.check_wc and self.instant is not None:
            contending = sum(1 for st in self.state.values() if st == AC)
            if len(self.running) != min(self.m, contending):
                self.fail(f"t={self.instant}: {len(self.running)} running with {contending} contending on {self.m} cpus")
            for sid in self.running:
                if self.state[sid] != AC:
                    self.fail(f"t={self.instant}: server {sid} running while {self.state[sid]}")

    def __call__(self, rec: TraceRecord):
        self.counts["records"] += 1
        if self.instant is not None and rec.time < self.instant:
            self.fail(f"trace time went backwards at {rec.time}")
        if rec.kind == "exec":
            # exec rows open the interval after the previous instant settled
            if self.instant is not None and rec.time >= self.instant:
                self._end_instant()
                self.instant = None
            self._check_exec(rec)
            self.vt(rec)
            return
        if self.instant is not None and rec.time != self.instant:
            self._end_instant()
        self.instant = rec.time
        sid = rec.server_id
        if sid is None:
            return
        P = self.params[sid]
        if rec.q is not None and not 0 <= rec.q <= P.max_budget_Q:
            self.fail(f"t={rec.time} server {sid}: budget {rec.q} outside [0, {P.max_budget_Q}]")
        if rec.rule is not None:
            self._check_transition(rec, P)
        if rec.kind == "dispatch":
            if rec.state != AC:
                self.fail(f"t={rec.time} server {sid}: dispatched while {rec.state}")
            if rec.cpu in self.running.values() or sid in self.running:
                self.fail(f"t={rec.time} server {sid}: double placement on cpu {rec.cpu}")
            self.running[sid] = rec.cpu
        elif rec.kind == "preempt":
            self.running.pop(sid, None)
        if rec.state is not None:
            self.state[sid] = rec.state
            if rec.state != AC:
                self.running.pop(sid, None)
            if rec.state == ANC:
                self.pending_anc[sid] = rec
            else:
                self.pending_anc.pop(sid, None)
        if rec.kind == "replenishment" and rec.q != P.max_budget_Q:
            self.fail(f"t={rec.time} server {sid}: replenished to {rec.q}")
        if rec.kind == "exhausted" and rec.time > rec.d:
            self.fail(f"t={rec.time} server {sid}: budget exhausted after server deadline {rec.d}")
        self._check_pool(rec)
        self.vt(rec)

    def _check_transition(self, rec: TraceRecord, P: ServerParams):
        sid = rec.server_id
        edge = _EDGES.get(rec.rule)
        if edge is None or (rec.from_state, rec.state) != edge:
            self.fail(f"t={rec.time} server {sid}: illegal edge {rec.from_state}->{rec.state} for rule {rec.rule}")
        if rec.from_state != self.state[sid]:
            self.fail(f"t={rec.time} server {sid}: edge starts in {rec.from_state}, last seen {self.state[sid]}")
        if rec.rule == "5":
            slack = rec.q - (rec.d - rec.time) * P.bandwidth_U
            if slack < -self.tol:
                self.fail(f"t={rec.time} server {sid}: went Inactive before its zero-lag time")

    def _check_pool(self, rec: TraceRecord):
        if self.mode is Mode.NONE or rec.uinact is None:
            return
        snap = rec.uinact
        if rec.rule == "5" and self.mode is Mode.SEQUENTIAL and rec.cpu is not None:
            self.stored[rec.server_id] = rec.cpu
        expected = self._expected_pool()
        if self.mode is Mode.PARALLEL:
            if not _close(snap, expected, self.tol):
                self.fail(f"t={rec.time}: U_inact {float(snap)} != expected {float(expected)}")
        else:
            if len(snap) != self.m or not all(_close(a, b, self.tol) for a, b in zip(snap, expected)):
                self.fail(f"t={rec.time}: per-cpu U_inact {[float(x) for x in snap]} != "
                          f"expected {[float(x) for x in expected]}")
            if rec.rule == "5" and self.last_snap is not None:
                U = self.U[rec.server_id]
                if rec.cpu is None or not _close(snap[rec.cpu] - self.last_snap[rec.cpu], U, self.tol):
                    self.fail(f"t={rec.time} server {rec.server_id}: deposit not on cpu {rec.cpu}")
        self.last_snap = snap

    def _check_exec(self, rec: TraceRecord):
        rate = rec.rate
        if not self.U[rec.server_id] - self.tol <= rate <= 1 + self.tol:
            self.fail(f"t={rec.time} server {rec.server_id}: rate {float(rate)} outside [U_i, 1]")
        if self.mode is Mode.NONE and rate != 1:
            self.fail(f"t={rec.time} server {rec.server_id}: reclaiming rate {float(rate)} in mode none")
        if rec.consumed > rec.duration or rec.consumed > rec.q:
            self.fail(f"t={rec.time} server {rec.server_id}: consumed {rec.consumed} in {rec.duration}")

    def finish(self) -> "TraceChecker":
        self._end_instant()
        self.instant = None
        return self


def check_trace(trace: Iterable[TraceRecord], servers: Sequence[ServerParams], m: int, mode,
                uinact_init, tol=0) -> TraceChecker:
    chk = TraceChecker(servers, m, mode, uinact_init, tol)
    for rec in trace:
        chk(rec)
    return chk.finish()
