"""Relative error of the time-averaged mean-Yaglom limit on the two-state chain.

The Cesaro average converges like 1/t, so rel * t levels off.
"""
from yaglom import build_chain, two_state_chain
from yaglom.qsd import qsd_density
from yaglom.spectral import SpectralProblem
from yaglom.verify import Mode, chain_subgenerator, semigroup_checks


def main():
    spec = two_state_chain()
    b = qsd_density(SpectralProblem(build_chain(spec)))
    sub = chain_subgenerator(spec)
    print(f"{'t':>8} {'rel error':>11} {'rel * t':>9}")
    for t in (10.0, 50.0, 100.0, 500.0, 2000.0):
        r = semigroup_checks(b, sub, Mode.MEAN_YAGLOM, t=t)
        print(f"{t:8.0f} {r['max']:11.3e} {r['scaled']:9.5f}")


if __name__ == "__main__":
    main()
