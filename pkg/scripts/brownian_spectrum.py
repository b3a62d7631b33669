"""Zeros of D for killed Brownian motion against -pi^2 k^2 / 2."""
import argparse
import math

from yaglom import BoundaryCase, ClosedFormBM, build_bm_closed_form
from yaglom.spectral import SpectralProblem, spectrum_in_rect


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=1025)
    ap.add_argument("--lambda-max", type=float, default=200.0)
    a = ap.parse_args()
    m, _ = build_bm_closed_form(ClosedFormBM(1.0, BoundaryCase.KILLED_BOTH, a.n))
    rep = spectrum_in_rect(SpectralProblem(m, lambda_max=a.lambda_max, B=5.0))
    print(f"{rep.count} zeros in {rep.box}")
    for k, z in enumerate(rep.zeros, 1):
        ref = -(math.pi * k) ** 2 / 2
        print(f"k={k:2d}  {z.real:14.8f} {z.imag:+.1e}i   closed form {ref:14.8f}   rel {abs(z.real - ref) / -ref:.1e}")


if __name__ == "__main__":
    main()
