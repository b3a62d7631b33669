import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from yaglom import BoundaryCase, ClosedFormBM, build_bm_closed_form
from yaglom.core import Closure
from yaglom.spectral import SpectralProblem, decay_parameter
from yaglom.scale import (
    NearZeroError, exit_laplace, identity_residuals, open_wbar_table, series_table, strict_kernel,
    wbar, wq_eval, z_tail_bound, zq_eval,
)

S2 = math.sqrt(2)


@pytest.fixture(scope="module")
def small():
    return build_bm_closed_form(ClosedFormBM(1.0, BoundaryCase.KILLED_BOTH, 65))


def test_w_at_one(bm_killed):
    model, _ = bm_killed
    ev = wq_eval(model, 1.0)
    assert ev.Wq[0, -1] == pytest.approx(math.sinh(S2) / S2, rel=5e-6)


def test_q_zero_is_kernel(bm_killed):
    model, _ = bm_killed
    ev = wq_eval(model, 0.0)
    assert np.array_equal(ev.Wq, np.triu(model.W, 1))
    assert np.all(ev.Zq == 1) and np.all(ev.Zq_end == 1)


def test_w_vanishes_at_first_dirichlet_zero(bm_killed):
    model, _ = bm_killed
    assert abs(wq_eval(model, -math.pi**2 / 2).Wq[0, -1]) < 1e-4


def test_z_values(bm_killed, bm_reflect):
    model, _ = bm_killed
    ev = wq_eval(model, 1.0)
    assert ev.Zq_end[0] == pytest.approx(math.cosh(S2), rel=1e-5)
    # open window drops half of the last cell
    h = 1 / model.M
    assert abs(zq_eval(ev, 0, model.M) - math.cosh(S2)) < 2 * h
    assert zq_eval(wq_eval(model, 0.0), 3, 40) == 1
    ev = wq_eval(bm_reflect[0], -math.pi**2 / 8)
    assert abs(ev.Zq_end[0]) < 1e-5
    with pytest.raises(ValueError):
        zq_eval(ev, 3)


def test_wbar(bm_killed):
    model, _ = bm_killed
    h = 1 / model.M
    assert float(wbar(model, 0, model.M, Closure.CLOSED_RIGHT)) == pytest.approx(1.0, abs=1e-12)
    assert abs(float(wbar(model, 0)) - 1.0) <= 1.01 * h
    assert not wbar(model, 0).truncated
    assert float(wbar(model, 10, 11)) == 0.0
    with pytest.raises(IndexError):
        wbar(model, 5, 3)


def test_wbar_vanishing_windows(bm_killed):
    model, _ = bm_killed
    vals = [float(wbar(model, 100, 100 + d)) for d in (256, 128, 64, 32, 16, 8, 4, 2, 1)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] == 0


def test_exit_laplace(bm_killed):
    model, _ = bm_killed
    e = exit_laplace(model, 0.0, 0, 256, 512)
    assert e["down"] == pytest.approx(0.5, abs=1e-12)
    assert e["down"] + e["up"] == pytest.approx(1.0, abs=1e-12)
    e = exit_laplace(model, 1.0, 0, 256, 512)
    assert e["down"].real == pytest.approx(math.sinh(S2 / 2) / math.sinh(S2), abs=1e-5)
    e = exit_laplace(model, 1.0, 0, 0, 512)
    assert e["down"] == 1 and e["up"] == 0
    lam0 = decay_parameter(SpectralProblem(model)).lambda0
    with pytest.raises(NearZeroError):
        exit_laplace(model, -lam0, 0, 10, 512)


def test_identities_examples(bm_killed):
    model, _ = bm_killed
    assert all((v or 0) == 0 for v in identity_residuals(model, 1.0, 1.0).values())
    for q, r in ((1.0, 2.0), (1 + 2j, -0.5 + 1j)):
        res = identity_residuals(model, q, r)
        assert res["resW"] < 1e-10 and res["resZ"] < 1e-10
        assert res["resR"] < 1e-9


def test_identities_chain(bd_entrance):
    _, model = bd_entrance
    res = identity_residuals(model, -3 + 1j, 2.5 - 4j)
    assert max(res.values()) < 1e-9


@given(st.complex_numbers(max_magnitude=50, allow_nan=False, allow_infinity=False))
def test_series_matches_volterra(small, q):
    model, _ = small
    s, bound, _ = series_table(model, q, tol=1e-10)
    v = wq_eval(model, q).Wq
    scale = np.abs(np.triu(model.W, 1)) * math.exp(abs(q) * 1.0)
    assert np.all(np.abs(s - v) <= 1e-10 * scale + 1e-10)
    assert bound <= 1e-10


def test_term_bound(small):
    model, _ = small
    A = strict_kernel(model)
    DA = model.w[:, None] * A
    Wb = open_wbar_table(model)
    term = A.copy()
    for n in range(1, 12):
        term = term @ DA
        assert np.all(term <= A * Wb**n / math.factorial(n) * (1 + 1e-12) + 1e-300)


@given(st.complex_numbers(max_magnitude=20, allow_nan=False, allow_infinity=False),
       st.complex_numbers(max_magnitude=20, allow_nan=False, allow_infinity=False))
def test_resolvent_identity_property(small, q, r):
    model, _ = small
    res = identity_residuals(model, q, r)
    big = math.exp(2 * math.sqrt(2 * max(abs(q), abs(r))))
    assert res["resW"] <= 1e-12 * big and res["resZ"] <= 1e-12 * big


@given(st.floats(0, 30))
def test_exit_mass(small, q):
    model, _ = small
    M = model.M
    for k in (1, M // 3, M - 1):
        e = exit_laplace(model, q, 0, k, M)
        assert e["down"].real + e["up"].real <= 1 + 1e-10
        assert e["down"].real >= -1e-12 and e["up"].real >= -1e-12


def test_tail_bound_dominates(bd_entrance):
    _, model = bd_entrance
    ev = wq_eval(model, -2.0)
    for i in (1, 5, 20):
        assert abs(zq_eval(ev, i)) <= z_tail_bound(model, -2.0, i)
