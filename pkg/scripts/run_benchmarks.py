"""1D benchmarks with closed-form optimal actions.

    python scripts/run_benchmarks.py --iters 500
"""
import argparse
import time

from spacetime_ot.diagnostics import report, wasserstein_estimate
from spacetime_ot.optimizer import PhaseSchedule, run
from spacetime_ot.problems import dilation_problem, translation_problem

EXACT = {"translation": 0.5 * 0.25 ** 2, "dilation": 1 / 6}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--nt", type=int, default=64)
    ap.add_argument("--nx", type=int, default=128)
    ap.add_argument("--iters", type=int, default=500)
    ap.add_argument("--dirichlet", type=int, default=0)
    args = ap.parse_args()
    sched = PhaseSchedule(neumann_iters=args.iters, dirichlet_iters=args.dirichlet)
    for name, make in (("translation", translation_problem), ("dilation", dilation_problem)):
        t = time.time()
        init = make(args.nt, args.nx, schedule=sched).initial_state()
        final = run(init)
        hj0, hj1 = report(init).hj_residual, report(final).hj_residual
        err = abs(final.energy - EXACT[name]) / EXACT[name]
        print(f"{name:12s} action {final.energy:.6f} exact {EXACT[name]:.6f} ({err:.2%})  "
              f"W2 {wasserstein_estimate(final):.4f}  HJ {hj0:.3e} -> {hj1:.3e}  "
              f"{final.iteration} it  {time.time() - t:.1f}s")


if __name__ == "__main__":
    main()
