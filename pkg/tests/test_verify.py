import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from yaglom import BoundaryCase, ChainSpec, DiffusionSpec, birth_death_chain, build_chain, build_diffusion, two_state_chain
from yaglom.qsd import qsd_density
from yaglom.spectral import SpectralProblem, expected_downcrossing_time
from yaglom.verify import (
    Mode, OracleError, SimEnsemble, chain_subgenerator, eig_decay_oracle, fd_subgenerator,
    hitting_time_oracle, semigroup_checks, simulate, transition_oracle, yaglom_report,
)

from conftest import golden


def pure_death(mu=1.0):
    return ChainSpec(np.array([[0.0, 0.0], [mu, 0.0]]), BoundaryCase.REFLECTING_RIGHT, "pure_death")


def bm_fd(n, case=BoundaryCase.KILLED_BOTH):
    return build_diffusion(DiffusionSpec(0.0, 1.0, 1.0, case, n))


# -- oracles ----------------------------------------------------------------


def test_two_state_oracle():
    o = eig_decay_oracle(chain_subgenerator(two_state_chain()))
    g0, g1 = golden()
    assert o["lambda0"] == pytest.approx(g0, abs=1e-12)
    assert o["lambda1"] == pytest.approx(g1, abs=1e-10)
    assert o["residual"] < 1e-12
    assert o["left_vec"].sum() == pytest.approx(1.0)
    assert o["right_vec"][-1] == 1.0


def test_one_state_oracle():
    o = eig_decay_oracle(chain_subgenerator(pure_death(3.0)))
    assert o["lambda0"] == pytest.approx(3.0, abs=1e-14)
    assert o["lambda1"] is None


def test_fd_killed_brownian():
    m = bm_fd(513)
    sub = fd_subgenerator(m)
    h = 1 / 512
    o = eig_decay_oracle(sub)
    # discrete Dirichlet Laplacian, first two modes
    exact = [(1 - math.cos(k * math.pi * h)) / h**2 for k in (1, 2)]
    assert o["lambda0"] == pytest.approx(exact[0], rel=1e-10)
    assert o["lambda1"] == pytest.approx(exact[1], rel=1e-8)
    assert o["lambda0"] == pytest.approx(math.pi**2 / 2, rel=1e-5)


def test_fd_needs_uniform_grid():
    m = bm_fd(17)
    x = np.asarray(m.x).copy()
    x[3] += 1e-3
    bad = m.__class__(m.grid.__class__(x, m.grid.right_end), m.measure, m.kernel, m.case,
                      name=m.name, extras=m.extras)
    with pytest.raises(OracleError):
        fd_subgenerator(bad)


def test_transition_oracle(two_state):
    spec, m = two_state
    sub = chain_subgenerator(spec)
    o = eig_decay_oracle(sub)
    v = np.array([0.3, -1.2])
    assert np.array_equal(transition_oracle(sub, 0.0, v), v)
    for t in (0.1, 1.0, 7.0):
        assert np.allclose(transition_oracle(sub, t, v), expm(t * sub.Q) @ v, atol=1e-12)
        assert np.allclose(transition_oracle(sub, t, v, left=True), v @ expm(t * sub.Q), atol=1e-12)
    r = o["right_vec"]
    assert np.allclose(math.exp(o["lambda0"]) * transition_oracle(sub, 1.0, r), r, atol=1e-12)
    for t in (0.5, 3.0):
        mass = transition_oracle(sub, t, o["left_vec"], left=True).sum()
        assert mass == pytest.approx(math.exp(-o["lambda0"] * t), rel=1e-12)
    with pytest.raises(ValueError):
        transition_oracle(sub, -1.0, v)


def test_hitting_time_oracle_matches_window_sums():
    spec = birth_death_chain(1.0, lambda n: n**2, 40)
    m = build_chain(spec)
    tau = hitting_time_oracle(spec, 0, 40)
    for x in (1, 5, 20):
        val, trunc = expected_downcrossing_time(m, x, 0)
        assert trunc
        assert val == pytest.approx(tau[x - 1], rel=1e-10)


@settings(max_examples=15)
@given(st.integers(2, 12), st.floats(0.2, 3.0), st.floats(0.5, 3.0))
def test_oracle_matches_numpy(N, lam, mu):
    spec = birth_death_chain(lam, mu, N, BoundaryCase.REFLECTING_RIGHT)
    sub = chain_subgenerator(spec)
    o = eig_decay_oracle(sub)
    ev = np.sort(-np.linalg.eigvals(sub.Q).real)
    assert o["lambda0"] == pytest.approx(ev[0], rel=1e-9)
    assert o["lambda1"] == pytest.approx(ev[1], rel=1e-7)
    b = qsd_density(SpectralProblem(build_chain(spec)))
    assert b.lambda0 == pytest.approx(o["lambda0"], rel=1e-9)
    assert np.allclose(b.nu[1:], o["left_vec"], atol=1e-9)


# -- simulation ---------------------------------------------------------------


def test_pure_death_survival():
    ens = simulate(pure_death(1.0), 1, 2.0, 20000, seed=7, dt_bucket=0.25)
    p = np.exp(-ens.times)
    se = np.sqrt(p * (1 - p) / ens.paths)
    assert np.all(np.abs(ens.survival_fraction() - p) <= 3 * se + 1e-12)
    assert ens.survival[0] == ens.paths


def test_two_state_histogram(two_state):
    spec, m = two_state
    ens = simulate(spec, 1, 15.0, 300000, seed=3, dt_bucket=0.5)
    b = qsd_density(SpectralProblem(m))
    n = ens.survival[-1]
    assert n > 500
    p = ens.hist[-1] / n
    se = np.sqrt(b.nu * (1 - b.nu) / n)
    assert np.all(np.abs(p - b.nu) <= 4 * se + 1e-12)
    surv = np.ones(2) @ expm(15.0 * spec.sub_generator())[0]
    assert ens.survival_fraction()[-1] == pytest.approx(surv, abs=4 * math.sqrt(surv / ens.paths))


def test_brownian_survival_vs_fd():
    m = bm_fd(65)
    sub = fd_subgenerator(m)
    ens = simulate(m, 32, 0.3, 20000, seed=11, step=1e-4, dt_bucket=0.1)
    exact = (expm(0.3 * sub.Q) @ np.ones(sub.n))[31]
    # Euler monitoring only at grid times overstates survival by O(sqrt(step))
    assert ens.survival_fraction()[-1] == pytest.approx(exact, abs=0.03)


def test_worker_independence(two_state):
    spec, _ = two_state
    a = simulate(spec, 1, 3.0, 5000, seed=5, workers=1, block=1000)
    b = simulate(spec, 1, 3.0, 5000, seed=5, workers=3, block=1000)
    assert np.array_equal(a.hist, b.hist)
    c = simulate(spec, 1, 3.0, 5000, seed=6, workers=1, block=1000)
    assert not np.array_equal(a.hist, c.hist)


def test_start_from_qsd_is_flat(two_state):
    spec, m = two_state
    b = qsd_density(SpectralProblem(m))
    ens = simulate(spec, 1, 5.0, 20000, seed=9, init=b.nu, dt_bucket=0.5)
    rep = yaglom_report(ens, b.nu)
    assert np.all(rep.tv[rep.kept] < 5 * rep.floor[rep.kept])


def test_yaglom_rate_two_state(two_state):
    spec, m = two_state
    b = qsd_density(SpectralProblem(m))
    ens = simulate(spec, 1, 8.0, 50000, seed=42, dt_bucket=0.1)
    rep = yaglom_report(ens, b.nu)
    g0, g1 = golden()
    assert rep.fitted_rate == pytest.approx(g1 - g0, rel=0.15)
    assert rep.fit_range[0] < rep.fit_range[1]


def test_empty_ensemble():
    z = np.zeros((2, 2), dtype=np.int64)
    ens = SimEnsemble(0, 10, 1.0, None, np.array([0.0, 1.0]), np.zeros(2, dtype=np.int64), z, "x", 1)
    with pytest.raises(ValueError):
        yaglom_report(ens, np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        simulate(pure_death(), 1, 1.0, 0, seed=0)


def test_inconsistent_counts_rejected():
    with pytest.raises(ValueError):
        SimEnsemble(0, 1, 1.0, None, np.array([0.0]), np.array([2]), np.array([[0, 2]]), "x", 1)


# -- semigroup checks ---------------------------------------------------------


def test_semigroup_modes(two_state):
    spec, m = two_state
    b = qsd_density(SpectralProblem(m))
    sub = chain_subgenerator(spec)
    inv = semigroup_checks(b, sub, Mode.INVARIANCE)
    assert inv["max"] < 1e-10
    r50 = semigroup_checks(b, sub, "mean_yaglom", t=50.0)
    r100 = semigroup_checks(b, sub, "mean_yaglom", t=100.0)
    # the Cesaro error is O(1/t): rel * t settles to a constant
    assert r100["scaled"] == pytest.approx(r50["scaled"], rel=1e-3)
    assert r100["max"] < r50["max"]
    qp = semigroup_checks(b, sub, Mode.QPROCESS)
    g0, g1 = golden()
    assert qp["fitted_rate"] == pytest.approx(g1 - g0, rel=1e-6)
