"""Grid refinement for Brownian motion on (0, 1): scale-function error and lambda0."""
import argparse
import math

import numpy as np

from yaglom import BoundaryCase, ClosedFormBM, build_bm_closed_form
from yaglom.scale import wq_eval
from yaglom.spectral import SpectralProblem, decay_parameter


def max_rel(model, oracle, q):
    x = model.x
    iu = np.triu_indices(x.size, 1)
    ref = oracle.W(q, x[:, None], x[None, :])[iu]
    return float(np.max(np.abs(wq_eval(model, q).Wq[iu] - ref) / np.abs(ref)))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--q", type=complex, default=2 + 3j)
    ap.add_argument("--levels", type=int, nargs="+", default=[65, 129, 257, 513, 1025])
    a = ap.parse_args()
    prev = None
    print(f"{'n':>6} {'W rel err':>11} {'ratio':>6} {'KB lambda0 err':>15} {'RR lambda0 err':>15}")
    for n in a.levels:
        m, o = build_bm_closed_form(ClosedFormBM(1.0, BoundaryCase.KILLED_BOTH, n))
        e = max_rel(m, o, a.q)
        lk = decay_parameter(SpectralProblem(m)).lambda0 - math.pi**2 / 2
        mr, _ = build_bm_closed_form(ClosedFormBM(1.0, BoundaryCase.REFLECTING_RIGHT, n))
        lr = decay_parameter(SpectralProblem(mr)).lambda0 - math.pi**2 / 8
        ratio = f"{prev / e:6.2f}" if prev else "     -"
        print(f"{n:6d} {e:11.3e} {ratio} {lk:15.3e} {lr:15.3e}")
        prev = e


if __name__ == "__main__":
    main()
