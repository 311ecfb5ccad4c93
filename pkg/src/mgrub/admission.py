"""G-EDF admission tests (GFB, modified BCL) and reclaimable-bandwidth
initialization for both reclaiming modes.

All arithmetic is exact (integers and ``Fraction``), so the equality branch
of the BCL test and the GFB boundary are decided without tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Sequence

from .model import ConfigError, Policy, ServerParams, as_fraction


@dataclass
class AdmissionVerdict:
    admitted: bool
    passed_gfb: bool
    passed_bcl: bool
    policy: Policy = Policy.GFB_OR_BCL
    # m(P_k - Q_k) - sum_i min(W_ik, P_k - Q_k), one entry per target server
    per_server_bcl_margin: List[Fraction] = field(default_factory=list)


@dataclass
class ReclaimInit:
    parallel_uinact0: Fraction
    sequential_uinact0: Fraction
    ux_prime: Fraction
    ux_dblprime: Fraction


def total_bandwidth(servers: Sequence[ServerParams]) -> Fraction:
    return sum((s.bandwidth_U for s in servers), Fraction(0))


def max_bandwidth(servers: Sequence[ServerParams]) -> Fraction:
    return max((s.bandwidth_U for s in servers), default=Fraction(0))


def gfb_slack(servers: Sequence[ServerParams], m: int) -> Fraction:
    """m - (m-1) U_max - U; the set passes GFB iff this is >= 0."""
    return m - (m - 1) * max_bandwidth(servers) - total_bandwidth(servers)


def gfb_admit(servers: Sequence[ServerParams], m: int) -> bool:
    if m < 1:
        raise ConfigError("m must be >= 1")
    return gfb_slack(servers, m) >= 0


def bcl_workload_bound(interferer: ServerParams, target: ServerParams) -> Fraction:
    """Worst-case workload of ``interferer`` inside the target's problem window,
    including the term for bandwidth reclaimed by aperiodic activations."""
    Q_i, P_i, U_i = interferer.max_budget_Q, interferer.period_P, interferer.bandwidth_U
    P_k = target.period_P
    delta = P_k % P_i
    return (P_k // P_i) * Q_i + min(Q_i, delta) + max(delta - Q_i, 0) * U_i


def _interference(servers: Sequence[ServerParams], k: int) -> Fraction:
    target = servers[k]
    slack = target.period_P - target.max_budget_Q
    return sum((min(bcl_workload_bound(s, target), slack)
                for i, s in enumerate(servers) if i != k), Fraction(0))


def bcl_margins(servers: Sequence[ServerParams], m: int) -> List[Fraction]:
    out = []
    for k, target in enumerate(servers):
        slack = target.period_P - target.max_budget_Q
        out.append(m * slack - _interference(servers, k))
    return out


def bcl_admit(servers: Sequence[ServerParams], m: int, condition_b: bool = True) -> AdmissionVerdict:
    """Per-target check: (a) strict interference bound, else (b) equality with
    the "no interferer with W <= P_k - Q_k" clause, taken literally."""
    if m < 1:
        raise ConfigError("m must be >= 1")
    margins = bcl_margins(servers, m)
    ok = True
    for k, target in enumerate(servers):
        if margins[k] > 0:
            continue
        slack = target.period_P - target.max_budget_Q
        if condition_b and margins[k] == 0:
            small = any(bcl_workload_bound(s, target) <= slack
                        for h, s in enumerate(servers) if h != k)
            if not small:
                continue
        ok = False
        break
    return AdmissionVerdict(admitted=ok, passed_gfb=False, passed_bcl=ok,
                            policy=Policy.BCL, per_server_bcl_margin=margins)


def admit(servers: Sequence[ServerParams], m: int, policy=Policy.GFB_OR_BCL,
          condition_b: bool = True) -> AdmissionVerdict:
    policy = Policy(policy)
    servers = list(servers)
    gfb = gfb_admit(servers, m)
    bcl = bcl_admit(servers, m, condition_b)
    admitted = {
        Policy.GFB: gfb,
        Policy.BCL: bcl.passed_bcl,
        Policy.GFB_OR_BCL: gfb or bcl.passed_bcl,
        Policy.OFF: True,
    }[policy]
    return AdmissionVerdict(admitted=admitted, passed_gfb=gfb, passed_bcl=bcl.passed_bcl,
                            policy=policy, per_server_bcl_margin=bcl.per_server_bcl_margin)


def init_uinact_parallel(servers: Sequence[ServerParams], m: int) -> Fraction:
    if not gfb_admit(servers, m):
        raise ConfigError("parallel reclaiming initialization requires a GFB-admitted set")
    return max(Fraction(0), gfb_slack(servers, m))


def _clamp01(x: Fraction) -> Fraction:
    return min(Fraction(1), max(Fraction(0), x))


def bcl_free_bandwidth(servers: Sequence[ServerParams], m: int) -> Fraction:
    """min_k of (P_k-Q_k)/P_k - interference_k/(m P_k); 1 for an empty set."""
    if not servers:
        return Fraction(1)
    return min((Fraction(s.period_P - s.max_budget_Q, s.period_P)
                - _interference(servers, k) / (m * s.period_P))
               for k, s in enumerate(servers))


def reclaim_init(servers: Sequence[ServerParams], m: int, epsilon_margin=Fraction(1, 10**6),
                 condition_b: bool = True) -> ReclaimInit:
    servers = list(servers)
    eps = as_fraction(epsilon_margin)
    gfb = gfb_admit(servers, m)
    bcl = bcl_admit(servers, m, condition_b).passed_bcl
    ux1 = _clamp01(gfb_slack(servers, m) / m) if gfb else Fraction(0)
    ux2 = _clamp01((1 - eps) * bcl_free_bandwidth(servers, m)) if bcl else Fraction(0)
    par = max(Fraction(0), gfb_slack(servers, m)) if gfb else Fraction(0)
    return ReclaimInit(parallel_uinact0=par, sequential_uinact0=max(ux1, ux2),
                       ux_prime=ux1, ux_dblprime=ux2)


def init_uinact_sequential(servers: Sequence[ServerParams], m: int,
                           epsilon_margin=Fraction(1, 10**6), condition_b: bool = True) -> Fraction:
    servers = list(servers)
    if not (gfb_admit(servers, m) or bcl_admit(servers, m, condition_b).passed_bcl):
        raise ConfigError("sequential reclaiming initialization requires a GFB- or BCL-admitted set")
    return reclaim_init(servers, m, epsilon_margin, condition_b).sequential_uinact0
