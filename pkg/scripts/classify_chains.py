"""Entrance test for birth-death chains along a doubling truncation schedule."""
import argparse

from yaglom import birth_death_chain, build_chain
from yaglom.spectral import classify_boundary


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=2048)
    a = ap.parse_args()
    chains = {
        "mu_n = n^2": birth_death_chain(1.0, lambda n: n**2, a.N),
        "mu_n = n^1.5": birth_death_chain(1.0, lambda n: n**1.5, a.N),
        "mu_n = n": birth_death_chain(1.0, lambda n: n, a.N),
        "mu_n = 1": birth_death_chain(1.0, 1.0, a.N),
    }
    for name, spec in chains.items():
        c = classify_boundary(build_chain(spec))
        tail = ", ".join(f"{v:.4g}" for v in c.wbar_tail[-4:])
        print(f"{name:14s} {c.verdict:14s} tail sums ... {tail}   sup E tau: {c.hitting_sup[-1]:.4g}")


if __name__ == "__main__":
    main()
