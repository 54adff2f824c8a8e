"""Action error of the translation benchmark under grid refinement.

    python scripts/convergence_study.py --sizes 16 32 64 128
"""
import argparse

import numpy as np

from spacetime_ot.optimizer import PhaseSchedule, run
from spacetime_ot.problems import translation_problem


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64, 128])
    ap.add_argument("--iters", type=int, default=500)
    args = ap.parse_args()
    exact = 0.5 * 0.25 ** 2
    errs = []
    for n in args.sizes:
        st = run(translation_problem(n, 2 * n, schedule=PhaseSchedule(neumann_iters=args.iters))
                 .initial_state())
        errs.append(abs(st.energy - exact) / exact)
        rate = "" if len(errs) < 2 else f"  rate {np.log2(errs[-2] / errs[-1]):.2f}"
        print(f"{n:4d} x {2 * n:4d}  action {st.energy:.6f}  rel err {errs[-1]:.3e}{rate}")


if __name__ == "__main__":
    main()
