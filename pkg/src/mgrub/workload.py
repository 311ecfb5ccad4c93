"""Random task-set and job-stream generation.

Utilizations are drawn uniformly from the slice of the unit cube with a fixed
sum (Stafford's randfixedsum, the sampler behind taskgen). Periods are
log-uniform; each task gets a server with Q = C and P = T, and per-job
execution times are uniform in [alpha * gamma * C, gamma * C].
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import admission
from .model import ConfigError, FixedExec, Job, ServerParams, TaskSpec, UniformExec

MS = 1_000_000


@dataclass(frozen=True)
class GenSpec:
    n_tasks: int = 12
    total_U: float = 2.5
    period_range: Tuple[int, int] = (10 * MS, 100 * MS)
    alpha: float = 1.0
    gamma: float = 1.0
    seed: int = 0
    # periods are rounded to a multiple of this (ns)
    period_granularity: int = 1000

    def __post_init__(self):
        if self.n_tasks < 1:
            raise ConfigError("n_tasks must be >= 1")
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha must be in (0, 1]")
        if self.gamma <= 0:
            raise ConfigError("gamma must be > 0")
        lo, hi = self.period_range
        if not 0 < lo <= hi:
            raise ConfigError("period_range must satisfy 0 < min <= max")
        if not 0 < self.total_U < self.n_tasks:
            raise ConfigError(f"total_U={self.total_U} infeasible for n={self.n_tasks}")


def randfixedsum(n: int, total: float, rng: np.random.Generator,
                 lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """One vector uniform on {x in [lo, hi]^n : sum(x) = total}."""
    s = (total - n * lo) / (hi - lo)
    k = max(min(math.floor(s), n - 1), 0)
    s = max(min(s, k + 1), k)
    s1 = s - np.arange(k, k - n, -1, dtype=float)
    s2 = np.arange(k + n, k, -1, dtype=float) - s
    w = np.zeros((n, n + 1))
    w[0, 1] = np.finfo(float).max
    t = np.zeros((max(n - 1, 1), n))
    tiny = 2.0 ** -1074
    for i in range(2, n + 1):
        tmp1 = w[i - 2, 1:i + 1] * s1[:i] / i
        tmp2 = w[i - 2, 0:i] * s2[n - i:n] / i
        w[i - 1, 1:i + 1] = tmp1 + tmp2
        tmp3 = w[i - 1, 1:i + 1] + tiny
        tmp4 = s2[n - i:n] > s1[:i]
        t[i - 2, :i] = (tmp2 / tmp3) * tmp4 + (1 - tmp1 / tmp3) * (~tmp4)
    x = np.zeros(n)
    sm, pr, j = 0.0, 1.0, k + 1
    for i in range(n - 1, 0, -1):
        e = 1 if rng.random() <= t[i - 1, j - 1] else 0
        sx = rng.random() ** (1.0 / i)
        sm += (1 - sx) * pr * s / (i + 1)
        pr *= sx
        x[n - i - 1] = sm + pr * e
        s -= e
        j -= e
    x[n - 1] = sm + pr * s
    rng.shuffle(x)
    return (hi - lo) * x + lo


def gen_utilizations(n: int, total_U: float, seed=0, u_min: float = 1e-4,
                     max_tries: int = 10_000) -> List[float]:
    if n < 1:
        raise ConfigError("n must be >= 1")
    if not 0 < total_U < n and not (n == 1 and 0 < total_U <= 1):
        raise ConfigError(f"total_U={total_U} infeasible for n={n}")
    if n == 1:
        return [float(total_U)]
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for _ in range(max_tries):
        u = randfixedsum(n, total_U, rng)
        if np.all(u > u_min) and np.all(u < 1.0):
            # re-balance the last ulp so the sum is exact to float precision
            u[-1] = total_U - float(np.sum(u[:-1]))
            if 0 < u[-1] < 1:
                return [float(v) for v in u]
    raise ConfigError(f"could not draw {n} utilizations summing to {total_U}")


def gen_taskset(spec: GenSpec) -> Tuple[List[TaskSpec], List[ServerParams]]:
    rng = np.random.default_rng(spec.seed)
    utils = gen_utilizations(spec.n_tasks, spec.total_U, rng)
    lo, hi = spec.period_range
    g = spec.period_granularity
    tasks, servers = [], []
    for i, u in enumerate(utils):
        T = math.exp(rng.uniform(math.log(lo), math.log(hi)))
        T = max(g, int(round(T / g)) * g)
        C = max(1, int(round(u * T)))
        wcet = spec.gamma * C
        e_lo = max(1, math.ceil(spec.alpha * wcet))
        e_hi = max(e_lo, math.floor(wcet))
        exec_model = FixedExec(e_lo) if e_lo == e_hi else UniformExec(e_lo, e_hi)
        tasks.append(TaskSpec(id=i, period_T=T, exec_model=exec_model))
        servers.append(ServerParams(id=i, period_P=T, max_budget_Q=C))
    return tasks, servers


def gen_sporadic_stream(task: TaskSpec, horizon: int, seed=0,
                        jitter_mean: Optional[int] = None) -> List[int]:
    """Arrival instants < horizon; every gap is T plus an exponential extra."""
    mean = task.jitter_mean if jitter_mean is None else jitter_mean
    rng = random.Random(f"{seed}/arrivals/{task.id}")
    out, a = [], task.arrival_offset
    while a < horizon:
        out.append(a)
        extra = int(round(rng.expovariate(1.0 / mean))) if mean > 0 else 0
        a += task.period_T + extra
    return out


def arrival_times(task: TaskSpec, horizon: int, seed=0) -> List[int]:
    if task.kind == "sporadic":
        return gen_sporadic_stream(task, horizon, seed)
    return list(range(task.arrival_offset, horizon, task.period_T))


def draw_exec(task: TaskSpec, rng: random.Random) -> int:
    em = task.exec_model
    if isinstance(em, FixedExec):
        return em.c
    return rng.randint(em.lo, em.hi)


def release_jobs(task: TaskSpec, horizon: int, seed=0, arrivals: Optional[Sequence[int]] = None) -> List[Job]:
    """Materialize the task's jobs released before ``horizon``."""
    rng = random.Random(f"{seed}/exec/{task.id}")
    if arrivals is None:
        arrivals = arrival_times(task, horizon, seed)
    return [Job(task.id, k, a, draw_exec(task, rng), a + task.rel_deadline_D)
            for k, a in enumerate(arrivals)]


def classify(servers: Sequence[ServerParams], m: int) -> str:
    gfb = admission.gfb_admit(servers, m)
    bcl = admission.bcl_admit(servers, m).passed_bcl
    return {(True, True): "both", (True, False): "gfb-only",
            (False, True): "bcl-only", (False, False): "neither"}[(gfb, bcl)]


def iter_tagged(base: GenSpec, count: int, m: int, seed0: int = 0) -> Iterator[Tuple[str, GenSpec]]:
    """Yield (bucket, spec) for ``count`` consecutive seeds."""
    for s in range(seed0, seed0 + count):
        spec = _with_seed(base, s)
        _, servers = gen_taskset(spec)
        yield classify(servers, m), spec


def find_buckets(base: GenSpec, m: int, samples: int = 10_000,
                 wanted=("gfb-only", "bcl-only"), seed0: int = 0) -> Dict[str, GenSpec]:
    """First generated spec landing in each wanted bucket (stops early)."""
    found: Dict[str, GenSpec] = {}
    for bucket, spec in iter_tagged(base, samples, m, seed0):
        if bucket in wanted and bucket not in found:
            found[bucket] = spec
            if len(found) == len(wanted):
                break
    return found


def admitted_specs(base: GenSpec, m: int, count: int, policy="gfb", seed0: int = 0,
                   max_samples: int = 100_000) -> List[GenSpec]:
    """The first ``count`` seeds whose task set passes ``policy``."""
    out = []
    for s in range(seed0, seed0 + max_samples):
        spec = _with_seed(base, s)
        _, servers = gen_taskset(spec)
        if admission.admit(servers, m, policy).admitted:
            out.append(spec)
            if len(out) == count:
                return out
    raise ConfigError(f"only {len(out)} of {count} admitted sets in {max_samples} samples")


def _with_seed(spec: GenSpec, seed: int) -> GenSpec:
    return GenSpec(spec.n_tasks, spec.total_U, spec.period_range, spec.alpha,
                   spec.gamma, seed, spec.period_granularity)
