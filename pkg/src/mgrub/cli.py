"""Command-line entry point: ``mgrub gen | admit | run | sweep``.

Exit codes: 0 success, 2 admission rejected, 3 input error, 4 invariant
violation (engine self-check or trace checker).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from . import __version__, admission, formats
from .engine import Engine
from .formats import InputError
from .invariants import TraceChecker
from .metrics import (METRICS_COLUMNS, RunMetrics, TraceRecorder, TraceWriter, aggregate,
                      metrics_row, write_metrics_csv)
from .model import (AdmissionRejected, ConfigError, EngineInvariantError, Mode, Policy,
                    SystemConfig)
from .oracle import compare_to_quantum, quantum_sim
from .workload import GenSpec, admitted_specs, classify, gen_taskset

log = logging.getLogger("mgrub")

EXIT_OK = 0
EXIT_REJECTED = 2
EXIT_INPUT = 3
EXIT_INVARIANT = 4

SWEEP_COLUMNS = ["set_seed", "alpha", "gamma", "mode", "init_reclaim", "status"] + METRICS_COLUMNS + ["error"]
SUMMARY_COLUMNS = ["alpha", "gamma", "mode", "init_reclaim", "cells", "failed",
                   "jobs_completed", "deadline_misses", "miss_pct"]


# ------------------------------------------------------------------ the plan


@dataclass
class ExperimentPlan:
    """A miss-ratio sweep: task sets x alpha x gamma x (mode, init)."""

    base: GenSpec
    alphas: List[float]
    gammas: List[float]
    modes: List[str] = field(default_factory=lambda: ["none", "parallel", "sequential"])
    init_reclaim: List[bool] = field(default_factory=lambda: [False, True])
    repetitions: int = 100
    m: int = 4
    # admission policy the task sets are selected (and run) under
    policy: str = "gfb"
    horizon: Optional[int] = None
    output: Optional[str] = None
    check_invariants: bool = False

    def __post_init__(self):
        if not self.alphas or not self.gammas or not self.modes or not self.init_reclaim:
            raise ConfigError("plan lists must be nonempty")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        self.modes = [Mode(x).value for x in self.modes]
        self.policy = Policy(self.policy).value

    def configs(self) -> List[Tuple[str, bool]]:
        """(mode, init) pairs; init is meaningless without reclaiming."""
        out = []
        for mode in self.modes:
            for init in self.init_reclaim:
                pair = (mode, bool(init) and mode != Mode.NONE.value)
                if pair not in out:
                    out.append(pair)
        return out

    def set_seeds(self) -> List[int]:
        if self.policy == Policy.OFF.value:
            return [self.base.seed + i for i in range(self.repetitions)]
        specs = admitted_specs(self.base, self.m, self.repetitions, self.policy, seed0=self.base.seed)
        return [s.seed for s in specs]

    def cells(self, seeds: Sequence[int]) -> List["Cell"]:
        return [Cell(s, a, g, mode, init)
                for s in seeds for a in self.alphas for g in self.gammas
                for mode, init in self.configs()]

    def to_json(self) -> dict:
        out = formats.header(formats.PLAN)
        out.update(base=formats.genspec_to_json(self.base), alphas=list(self.alphas),
                   gammas=list(self.gammas), modes=list(self.modes),
                   init_reclaim=list(self.init_reclaim), repetitions=self.repetitions, m=self.m,
                   policy=self.policy, horizon=self.horizon, output=self.output,
                   check_invariants=self.check_invariants)
        return out

    @classmethod
    def from_json(cls, obj, where="plan", seed=None) -> "ExperimentPlan":
        formats.check_header(obj, formats.PLAN, where)
        formats.check_keys(obj, where, ("format", "version", "base", "alphas", "gammas"),
                           ("modes", "init_reclaim", "repetitions", "m", "policy", "horizon",
                            "output", "check_invariants"))
        kw = {k: v for k, v in obj.items() if k not in ("format", "version", "base")}
        kw["base"] = formats.genspec_from_json(obj["base"], f"{where}.base", seed=seed)
        if kw.get("horizon") is not None:
            kw["horizon"] = formats.parse_time(kw["horizon"])
        try:
            return cls(**kw)
        except (TypeError, ValueError) as e:
            raise InputError(f"{where}: {e}") from e


@dataclass(frozen=True)
class Cell:
    set_seed: int
    alpha: float
    gamma: float
    mode: str
    init_reclaim: bool


def run_cell(plan: ExperimentPlan, cell: Cell) -> Tuple[dict, Optional[RunMetrics]]:
    """One isolated engine run. Failures become a row, never an exception."""
    row = {"set_seed": cell.set_seed, "alpha": cell.alpha, "gamma": cell.gamma,
           "mode": cell.mode, "init_reclaim": int(cell.init_reclaim), "error": ""}
    try:
        spec = dataclasses.replace(plan.base, alpha=cell.alpha, gamma=cell.gamma, seed=cell.set_seed)
        tasks, servers = gen_taskset(spec)
        cfg = SystemConfig(m=plan.m, mode=cell.mode, init_reclaim=cell.init_reclaim,
                           admission=plan.policy, horizon=plan.horizon, seed=cell.set_seed)
        eng = Engine(cfg, tasks, servers, record_exec=plan.check_invariants)
        checker = None
        if plan.check_invariants:
            checker = TraceChecker(servers, plan.m, cell.mode, eng.uinact0)
            eng.sinks.append(checker)
        metrics = eng.run()
        if checker is not None and not checker.finish().ok:
            row.update(status="invariant-violation", error=checker.all_violations()[0])
        else:
            row["status"] = "ok"
        row.update(metrics_row(metrics))
        return row, metrics
    except Exception as e:  # recorded per cell; the sweep continues
        row.update(status="error", error=f"{type(e).__name__}: {e}")
        return row, None


def _run_cell_packed(args):
    return run_cell(*args)


def run_sweep(plan: ExperimentPlan, jobs: int = 1) -> Tuple[List[dict], List[dict]]:
    """Returns (cell rows, summary rows), both in deterministic order."""
    cells = plan.cells(plan.set_seeds())
    log.info("sweep: %d cells", len(cells))
    work = [(plan, c) for c in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_packed, work, chunksize=4))
    else:
        results = [run_cell(plan, c) for c in cells]
    groups: Dict[tuple, list] = {}
    for (row, met), c in zip(results, cells):
        groups.setdefault((c.alpha, c.gamma, c.mode, c.init_reclaim), []).append(met)
    summary = []
    for (a, g, mode, init), mets in groups.items():
        ok = [x for x in mets if x is not None]
        agg = aggregate(ok)
        summary.append({"alpha": a, "gamma": g, "mode": mode, "init_reclaim": int(init),
                        "cells": len(mets), "failed": len(mets) - len(ok),
                        "jobs_completed": agg.jobs_completed,
                        "deadline_misses": agg.deadline_misses,
                        "miss_pct": f"{agg.miss_pct:.6f}"})
    return [r for r, _ in results], summary


def _write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, columns, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# ---------------------------------------------------------------- commands


def _build_config(args, cfg: Optional[SystemConfig] = None) -> SystemConfig:
    if args.config:
        cfg = formats.load_config(args.config)
    cfg = cfg or SystemConfig()
    over = {}
    for name in ("m", "mode", "init_reclaim", "seed"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    if getattr(args, "admission", None):
        over["admission"] = args.admission
    if getattr(args, "horizon", None) is not None:
        over["horizon"] = formats.parse_time(args.horizon)
    if getattr(args, "no_bcl_b", False):
        over["bcl_condition_b"] = False
    try:
        return dataclasses.replace(cfg, **over)
    except ValueError as e:
        raise InputError(str(e)) from e


def cmd_gen(args) -> int:
    spec, count, m, filt = formats.genrequest_from_json(formats.load_json(args.spec), args.spec,
                                                        seed=args.seed)
    m = args.m or m
    out = Path(args.output or ".")
    out.mkdir(parents=True, exist_ok=True)
    if filt:
        specs = admitted_specs(spec, m, count, filt, seed0=spec.seed)
    else:
        specs = [dataclasses.replace(spec, seed=spec.seed + i) for i in range(count)]
    index = formats.header(formats.INDEX)
    index.update(m=m, filter=filt, generator=formats.genspec_to_json(spec), sets=[])
    for s in specs:
        tasks, servers = gen_taskset(s)
        name = f"taskset_{s.seed:06d}.json"
        formats.save_taskset(out / name, tasks, servers, s)
        bucket = classify(servers, m)
        index["sets"].append({
            "file": name, "seed": s.seed, "bucket": bucket,
            "passed_gfb": bucket in ("both", "gfb-only"),
            "passed_bcl": bucket in ("both", "bcl-only"),
            "total_U": float(admission.total_bandwidth(servers)),
            "U_max": float(admission.max_bandwidth(servers)),
        })
    formats.dump_json(index, out / "index.json")
    print(f"wrote {len(specs)} task sets and index.json to {out}")
    return EXIT_OK


def cmd_admit(args) -> int:
    tasks, servers = formats.load_taskset(args.taskset)
    cond_b = not args.no_bcl_b
    verdict = admission.admit(servers, args.m, args.policy, cond_b)
    init = admission.reclaim_init(servers, args.m, condition_b=cond_b)
    report = formats.header("mgrub-verdict")
    report.update(
        m=args.m, policy=verdict.policy.value, admitted=verdict.admitted,
        passed_gfb=verdict.passed_gfb, passed_bcl=verdict.passed_bcl,
        total_U=str(admission.total_bandwidth(servers)),
        total_U_float=float(admission.total_bandwidth(servers)),
        U_max=str(admission.max_bandwidth(servers)),
        gfb_slack=str(admission.gfb_slack(servers, args.m)),
        gfb_slack_float=float(admission.gfb_slack(servers, args.m)),
        per_server_bcl_margin=[
            {"server_id": s.id, "margin": str(mg), "margin_float": float(mg)}
            for s, mg in zip(servers, verdict.per_server_bcl_margin)],
        reclaim_init={k: str(v) for k, v in dataclasses.asdict(init).items()},
    )
    text = json.dumps(report, indent=2)
    human = (f"{'ADMITTED' if verdict.admitted else 'REJECTED'} under {verdict.policy.value} on "
             f"m={args.m}: GFB {'pass' if verdict.passed_gfb else 'fail'}, "
             f"BCL {'pass' if verdict.passed_bcl else 'fail'} "
             f"(U={float(admission.total_bandwidth(servers)):.4f}, "
             f"U_max={float(admission.max_bandwidth(servers)):.4f})")
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
        print(human)
    else:
        print(text)
        print(human, file=sys.stderr)
    return EXIT_OK if verdict.admitted else EXIT_REJECTED


def cmd_run(args) -> int:
    tasks, servers = formats.load_taskset(args.taskset)
    cfg = _build_config(args)
    eng = Engine(cfg, tasks, servers, record_exec=not args.no_exec)
    checker = None
    if not args.no_check:
        checker = TraceChecker(servers, cfg.m, cfg.mode, eng.uinact0)
        eng.sinks.append(checker)
    recorder = None
    if args.oracle:
        recorder = TraceRecorder(include_exec=False)
        eng.sinks.append(recorder)
    out = Path(args.output) if args.output else None
    fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "trace.jsonl", "w", encoding="utf-8")
        eng.sinks.append(TraceWriter(fh))
    try:
        metrics = eng.run()
    finally:
        if fh is not None:
            fh.close()
    if out is not None:
        write_metrics_csv(out / "metrics.csv", metrics)
    report = {"mode": cfg.mode.value, "init_reclaim": cfg.init_reclaim, "m": cfg.m,
              "horizon": eng.horizon, "seed": cfg.seed}
    report.update(metrics_row(metrics))
    if args.oracle:
        quantum = min(s.period_P for s in servers) / 1000
        qres = quantum_sim(cfg, tasks, servers, quantum)
        div = compare_to_quantum(recorder.records, qres, eng.horizon, quantum)
        report["oracle"] = {"quantum_ns": quantum, "compared": div.compared,
                            "max_time_div_quanta": div.max_time / quantum,
                            "max_budget_div_quanta": div.max_budget / quantum,
                            "mismatch": div.mismatch}
    status = EXIT_OK
    if checker is not None:
        checker.finish()
        report["invariants_ok"] = checker.ok
        if not checker.ok:
            for v in checker.all_violations()[:20]:
                print(f"invariant: {v}", file=sys.stderr)
            status = EXIT_INVARIANT
    print(json.dumps(report, indent=2))
    return status


def cmd_sweep(args) -> int:
    plan = ExperimentPlan.from_json(formats.load_json(args.plan), args.plan, seed=args.seed)
    if args.m is not None:
        plan.m = args.m
    if args.horizon is not None:
        plan.horizon = formats.parse_time(args.horizon)
    output = args.output or plan.output or "sweep.csv"
    rows, summary = run_sweep(plan, args.jobs)
    _write_csv(output, SWEEP_COLUMNS, rows)
    summary_path = str(Path(output).with_suffix("")) + ".summary.csv"
    _write_csv(summary_path, SUMMARY_COLUMNS, summary)
    failed = sum(r["status"] != "ok" for r in rows)
    for s in summary:
        print(f"alpha={s['alpha']:<5} gamma={s['gamma']:<5} {s['mode']:<10} init={s['init_reclaim']} "
              f"miss%={float(s['miss_pct']):8.3f}  ({s['cells']} cells, {s['failed']} failed)")
    print(f"wrote {len(rows)} rows to {output} ({failed} failed cells); summary in {summary_path}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mgrub", description="Multiprocessor GRUB reclaiming simulator")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate task-set files from a generator spec")
    g.add_argument("spec", help="mgrub-genspec JSON file")
    g.add_argument("--seed", type=int, help="override the first seed")
    g.add_argument("--m", type=int, help="processors used for the admission index")
    g.add_argument("--output", help="output directory (default: .)")
    g.set_defaults(func=cmd_gen)

    a = sub.add_parser("admit", help="run the admission tests on a task set")
    a.add_argument("taskset")
    a.add_argument("--m", type=int, default=4)
    a.add_argument("--policy", default="gfb-or-bcl", choices=[x.value for x in Policy])
    a.add_argument("--no-bcl-b", action="store_true", help="use BCL condition (a) only")
    a.add_argument("--output", help="write the JSON verdict here")
    a.set_defaults(func=cmd_admit)

    r = sub.add_parser("run", help="simulate one task set")
    r.add_argument("taskset")
    r.add_argument("--config", help="mgrub-config JSON file; flags override it")
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", choices=[x.value for x in Mode])
    r.add_argument("--init-reclaim", action=argparse.BooleanOptionalAction, default=None)
    r.add_argument("--m", type=int)
    r.add_argument("--horizon", help="ns, or with unit: 2s, 500ms")
    r.add_argument("--admission", choices=[x.value for x in Policy])
    r.add_argument("--no-bcl-b", action="store_true")
    r.add_argument("--oracle", action="store_true", help="cross-check against the quantum simulator")
    r.add_argument("--output", help="directory for trace.jsonl and metrics.csv")
    r.add_argument("--no-exec", action="store_true", help="omit execution-interval records")
    r.add_argument("--no-check", action="store_true", help="skip the streaming invariant checker")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run an experiment plan")
    s.add_argument("plan", help="mgrub-plan JSON file")
    s.add_argument("--seed", type=int, help="override the plan's first set seed")
    s.add_argument("--m", type=int)
    s.add_argument("--horizon")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--output", help="cell CSV path (summary goes next to it)")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except AdmissionRejected as e:
        print(f"admission rejected: {e}", file=sys.stderr)
        return EXIT_REJECTED
    except EngineInvariantError as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, OSError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
