import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from yaglom import BoundaryCase, ChainSpec, ClosedFormBM, birth_death_chain, build_bm_closed_form, build_chain
from yaglom.spectral import (
    DKind, SpectralError, SpectralProblem, classify_boundary, decay_parameter, eval_D, eval_D_prime,
    expected_downcrossing_time, spectral_gap, spectrum_in_rect,
)
from yaglom.verify import hitting_time_oracle

from conftest import golden

PI2 = math.pi**2


@pytest.fixture(scope="module")
def fine_reflect():
    return build_bm_closed_form(ClosedFormBM(1.0, BoundaryCase.REFLECTING_RIGHT, 1025))[0]


def test_kind_follows_case(bm_killed, two_state):
    assert SpectralProblem(bm_killed[0]).kind is DKind.W_INTERVAL
    assert SpectralProblem(two_state[1]).kind is DKind.Z_INTERVAL
    with pytest.raises(ValueError):
        SpectralProblem(two_state[1], DKind.W_INTERVAL)


def test_eval_D_examples(bm_killed, bm_reflect, fine_reflect):
    P = SpectralProblem(bm_killed[0])
    assert eval_D(P, 1.0).real == pytest.approx(math.sinh(math.sqrt(2)) / math.sqrt(2), rel=5e-6)
    assert eval_D(P, 0.0) == pytest.approx(1.0, abs=1e-14)  # W(0, ell)
    assert eval_D(SpectralProblem(bm_reflect[0]), 0.0) == 1.0
    assert abs(eval_D(SpectralProblem(fine_reflect), -PI2 / 8)) < 1e-3


def test_eval_D_prime_examples(fine_reflect, bm_reflect):
    P = SpectralProblem(fine_reflect)
    assert eval_D_prime(P, -PI2 / 8).real == pytest.approx(2 / math.pi, abs=1e-5)
    m = bm_reflect[0]
    wbar_closed = float(np.triu(m.W, 1)[0] @ m.w)
    assert eval_D_prime(SpectralProblem(m), 0.0).real == pytest.approx(wbar_closed, rel=1e-13)
    for q in (1.0, -2 + 1j):
        h = 1e-4
        fd = (eval_D(P, q + h) - eval_D(P, q - h)) / (2 * h)
        assert abs(fd - eval_D_prime(P, q)) < 1e-7


def test_decay_examples(bm_killed, bm_reflect, two_state):
    assert decay_parameter(SpectralProblem(bm_killed[0])).lambda0 == pytest.approx(PI2 / 2, abs=1e-4)
    assert decay_parameter(SpectralProblem(bm_reflect[0])).lambda0 == pytest.approx(PI2 / 8, abs=1e-5)
    d = decay_parameter(SpectralProblem(two_state[1]))
    assert d.lambda0 == pytest.approx(golden()[0], abs=1e-14)
    assert d.simple and d.residual < 1e-14


def test_decay_root_properties(bm_killed):
    P = SpectralProblem(bm_killed[0])
    d = decay_parameter(P)
    eps = 1e-6
    a, b = eval_D(P, -d.lambda0 + eps).real, eval_D(P, -d.lambda0 - eps).real
    assert a * b < 0
    assert d.residual < 1e-12


def test_no_zero_in_small_box(two_state):
    with pytest.raises(SpectralError):
        decay_parameter(SpectralProblem(two_state[1], lambda_max=0.2))


def test_rect_examples(bm_killed, two_state):
    rep = spectrum_in_rect(SpectralProblem(bm_killed[0]), (-25, -0.1, -5, 5))
    assert len(rep.zeros) == 2 and rep.count == 2
    assert np.allclose([z.real for z in rep.zeros], [-PI2 / 2, -2 * PI2], rtol=1e-4)
    assert all(abs(z.imag) < 1e-9 for z in rep.zeros)
    assert spectrum_in_rect(SpectralProblem(bm_killed[0]), (1, 2, -1, 1)).zeros == ()
    rep = spectrum_in_rect(SpectralProblem(two_state[1]), (-3, -0.1, -1, 1))
    assert np.allclose(sorted(z.real for z in rep.zeros), [-golden()[1], -golden()[0]], atol=1e-12)


def test_gap_examples(bm_killed, bm_reflect, two_state):
    assert spectral_gap(SpectralProblem(bm_killed[0])).gap == pytest.approx(1.5 * PI2, rel=1e-3)
    assert spectral_gap(SpectralProblem(bm_reflect[0])).gap == pytest.approx(PI2, rel=1e-3)
    rep = spectral_gap(SpectralProblem(two_state[1]))
    assert rep.gap == pytest.approx(math.sqrt(5), abs=1e-12)
    assert rep.lambda1 > rep.lambda0
    assert "search box" in rep.caveat


def cyclic_chain():
    r = np.zeros((4, 4))
    r[1, 0], r[1, 3], r[3, 2], r[2, 1] = 1.0, 5.0, 5.0, 5.0
    return ChainSpec(r, BoundaryCase.REFLECTING_RIGHT)


def test_complex_zeros_conjugate():
    spec = cyclic_chain()
    ev = -np.linalg.eigvals(spec.sub_generator())
    assert np.any(np.abs(ev.imag) > 0.1)
    rep = spectrum_in_rect(SpectralProblem(build_chain(spec)))
    zs = np.array(rep.zeros)
    assert len(zs) == 3
    for z in zs:
        assert np.min(np.abs(zs - z.conjugate())) < 1e-10
        assert np.min(np.abs(-ev - z)) < 1e-8
    # ordering: descending real part, then |Im|
    assert all(a.real >= b.real - 1e-12 for a, b in zip(zs, zs[1:]))


@st.composite
def bd_specs(draw):
    N = draw(st.integers(2, 8))
    lam = draw(st.lists(st.floats(0.1, 3), min_size=N, max_size=N))
    mu = draw(st.lists(st.floats(0.3, 3), min_size=N, max_size=N))
    return birth_death_chain(lam, mu, N, BoundaryCase.REFLECTING_RIGHT)


@settings(max_examples=15)
@given(bd_specs())
def test_zeros_are_eigenvalues(spec):
    ev = np.sort(-np.linalg.eigvals(spec.sub_generator()).real)
    P = SpectralProblem(build_chain(spec), lambda_max=float(ev[-1]) * 1.3 + 1, B=2.0)
    rep = spectrum_in_rect(P)
    z = np.sort(np.array(rep.zeros).real)
    assert len(z) == len(ev)
    assert np.max(np.abs(-z[::-1] - ev)) < 1e-8
    assert all(abs(c.raw - c.winding) < 1e-6 for c in rep.certificates)


@settings(max_examples=10)
@given(bd_specs(), st.floats(0.0, 5.0))
def test_no_zeros_right_half_plane(spec, x0):
    rep = spectrum_in_rect(SpectralProblem(build_chain(spec)), (x0 + 0.01, x0 + 2, -3, 3))
    assert rep.zeros == () and rep.count == 0


@given(st.floats(-40, 40))
def test_D_real_on_real_axis(bm_reflect, q):
    assert eval_D(SpectralProblem(bm_reflect[0]), q).imag == 0


def test_classify_examples():
    ent = build_chain(birth_death_chain(1.0, lambda n: n**2, 2048, BoundaryCase.ENTRANCE_INFINITY))
    c = classify_boundary(ent)
    assert c.entrance is True and c.hitting_agrees
    crit = build_chain(birth_death_chain(1.0, 1.0, 2048, BoundaryCase.ENTRANCE_INFINITY))
    c = classify_boundary(crit)
    assert c.entrance is False and c.hitting_agrees


def test_classify_refuses_accessible(bm_killed):
    with pytest.raises(ValueError):
        classify_boundary(bm_killed[0])


def test_downcrossing(bd_entrance):
    spec, m = bd_entrance
    assert expected_downcrossing_time(m, 5, 5) == (0.0, False)
    vals = [expected_downcrossing_time(m, x, 5)[0] for x in range(6, 31)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    # bounded in x: the top values barely move
    assert vals[-1] - vals[-5] < 0.05 * vals[-1]
    ref = hitting_time_oracle(spec, 5, 30)
    assert np.allclose(vals, ref, rtol=1e-10)
    with pytest.raises(IndexError):
        expected_downcrossing_time(m, 3, 5)


def test_chain_evaluator_determinant_form():
    from yaglom.scale import ChainEvaluator, RowColumnEvaluator
    from yaglom.spectral import D_and_prime

    for case in (BoundaryCase.REFLECTING_RIGHT, BoundaryCase.KILLED_BOTH):
        spec = birth_death_chain(lambda n: 0.5 + n, 1.5, 9, case)
        m = build_chain(spec)
        P = SpectralProblem(m)
        assert isinstance(P._ev, ChainEvaluator)
        Q = spec.sub_generator()
        d = spec.down_rates()[1:]  # killed-both also divides by d_N
        qs = np.array([0.4, -2.0 + 1.0j, 3.0])
        D, Dp = D_and_prime(P, qs)
        det = np.array([np.linalg.det(q * np.eye(Q.shape[0]) - Q) for q in qs]) / np.prod(d)
        assert np.allclose(D, det, rtol=1e-12)
        h = 1e-6
        fd = (D_and_prime(P, qs + h)[0] - D_and_prime(P, qs - h)[0]) / (2 * h)
        assert np.allclose(Dp, fd, rtol=1e-7)
        generic = RowColumnEvaluator(m)
        assert np.allclose(P._ev.row0(qs), generic.row0(qs), rtol=1e-12, atol=1e-14)
