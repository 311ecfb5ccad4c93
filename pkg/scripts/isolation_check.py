"""Temporal-isolation spot check: admitted sets where every task over-runs
by gamma except the highest-bandwidth one (C = Q), in parallel (GFB sets) and
sequential (GFB-or-BCL sets) mode, with the trace checker attached.

    python scripts/isolation_check.py --sets 20 --gamma 1.3
"""

import argparse
import dataclasses

from mgrub.engine import Engine
from mgrub.invariants import TraceChecker
from mgrub.model import FixedExec, SystemConfig
from mgrub.workload import GenSpec, admitted_specs, gen_taskset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sets", type=int, default=20)
    ap.add_argument("--n", type=int, default=12)
    ap.add_argument("--gamma", type=float, default=1.3)
    ap.add_argument("--horizon", type=int, default=2 * 10**9, help="ns")
    args = ap.parse_args()
    base = GenSpec(n_tasks=args.n, total_U=2.5, alpha=1.0, gamma=args.gamma)
    for mode, policy in (("parallel", "gfb"), ("sequential", "gfb-or-bcl")):
        misses = violations = 0
        for spec in admitted_specs(base, 4, args.sets, policy):
            tasks, servers = gen_taskset(spec)
            k = max(range(len(servers)), key=lambda i: servers[i].bandwidth_U)
            tasks[k] = dataclasses.replace(tasks[k], exec_model=FixedExec(servers[k].max_budget_Q))
            for init in (False, True):
                cfg = SystemConfig(m=4, mode=mode, init_reclaim=init, admission=policy,
                                   horizon=args.horizon, seed=spec.seed)
                eng = Engine(cfg, tasks, servers)
                chk = TraceChecker(servers, 4, mode, eng.uinact0)
                eng.sinks.append(chk)
                met = eng.run()
                misses += met.tasks[k].deadline_misses
                violations += not chk.finish().ok
        print(f"{mode:<10} {args.sets} sets x 2: hard-task misses {misses}, traces with violations {violations}")


if __name__ == "__main__":
    main()
