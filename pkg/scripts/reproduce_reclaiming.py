"""Miss-ratio sweeps for the gamma = 1.1 and gamma = 1.3 experiments.

Runs both example plans (100 GFB-admitted sets at U = 2.5, m = 4, every
alpha in {0.2, 0.4, 0.6, 0.8}; no reclaiming, parallel and sequential, with
and without initialization) and writes one cell CSV plus a summary CSV per
plan. The full run is about 4000 simulations; use --repetitions to shrink it.

    python scripts/reproduce_reclaiming.py --repetitions 20 --jobs 4
"""

import argparse
from pathlib import Path

from mgrub import formats
from mgrub.cli import SUMMARY_COLUMNS, SWEEP_COLUMNS, ExperimentPlan, _write_csv, run_sweep

HERE = Path(__file__).parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repetitions", type=int, default=100)
    ap.add_argument("--horizon", default="1s")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--check", action="store_true", help="run the trace checker on every cell")
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("plan_gamma11.json", "plan_gamma13.json"):
        plan = ExperimentPlan.from_json(formats.load_json(HERE / "examples" / name), name)
        plan.repetitions = args.repetitions
        plan.horizon = formats.parse_time(args.horizon)
        plan.check_invariants = args.check
        rows, summary = run_sweep(plan, args.jobs)
        stem = out / Path(name).stem
        _write_csv(f"{stem}.csv", SWEEP_COLUMNS, rows)
        _write_csv(f"{stem}.summary.csv", SUMMARY_COLUMNS, summary)
        print(f"\n{name}: {len(rows)} cells, {sum(r['status'] != 'ok' for r in rows)} failed")
        print(f"{'alpha':>6} {'mode':<11}{'init':>5} {'miss%':>9}")
        for s in summary:
            print(f"{s['alpha']:>6} {s['mode']:<11}{s['init_reclaim']:>5} {float(s['miss_pct']):9.3f}")


if __name__ == "__main__":
    main()
