"""Scan solver settings on the sin benchmarks and report tail statistics.

Prints, for each candidate setting, the final and the worst-over-tail
relative errors so that settled configurations can be told apart from ones
that merely pass through a good region.
"""

import argparse
import time

import numpy as np

from bvfsm import (
    ScheduleState,
    SolverConfig,
    StaticShift,
    make_pessimistic_sin_problem,
    make_sin_problem,
    parse_aux,
    solve,
)


def run_one(bench, s2_0, pow_, K, x0, y0, aux="inverse", decay=1.0 / 1.01, tail=300):
    sched = ScheduleState(decay=decay, sigma2=StaticShift(s2_0, decay**pow_))
    cfg = SolverConfig(K=K, schedule=sched, aux_f=parse_aux(aux, modified=True))
    t0 = time.time()
    tr = solve(bench.problem, cfg, x0, y0, reference=bench.reference)
    dt = time.time() - t0
    rx = [r.rel_err_x for r in tr.records[-tail:]]
    rF = [r.rel_err_F for r in tr.records[-tail:]]
    return dict(
        final_x=tr.final.x[0],
        rel_x=tr.final.rel_err_x,
        rel_F=tr.final.rel_err_F,
        tail_max_x=max(rx),
        tail_max_F=max(rF),
        seconds=dt,
    )


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mode", choices=["opt", "pess"], default="opt")
    ap.add_argument("--K", type=int, default=3000)
    ap.add_argument("--s2", type=float, nargs="+", default=[2.0])
    ap.add_argument("--pow", type=float, nargs="+", default=[0.6])
    ap.add_argument("--inits", type=float, nargs="+", default=[8.0, 0.0])
    ap.add_argument("--n", type=int, default=2)
    args = ap.parse_args()

    if args.mode == "opt":
        bench = make_sin_problem(args.n, 2.0, 2.0)
    else:
        bench = make_pessimistic_sin_problem(args.n, 2.0, 2.0)
    print(f"x* = {bench.x_star[0]:.5f}  F* = {bench.F_star:.5f}")
    for s2_0 in args.s2:
        for pow_ in args.pow:
            for init in args.inits:
                x0 = np.array([init])
                y0 = np.full(args.n, init)
                r = run_one(bench, s2_0, pow_, args.K, x0, y0)
                print(
                    f"s2={s2_0:<5g} pow={pow_:<5g} init={init:<4g} "
                    f"x={r['final_x']:+.5f} rel_x={r['rel_x']:.4f} rel_F={r['rel_F']:.4f} "
                    f"tail_max_x={r['tail_max_x']:.4f} tail_max_F={r['tail_max_F']:.4f} "
                    f"({r['seconds']:.0f}s)",
                    flush=True,
                )


if __name__ == "__main__":
    main()
