import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from yaglom import BoundaryCase, ChainSpec, DiffusionSpec, build_chain, build_diffusion, validate
from yaglom.models import (
    BMOracle, ModelError, birth_death_chain, chain_scale_direct, model_from_document,
    occupation_kernel, two_state_chain,
)
from yaglom.scale import exit_laplace

KB = BoundaryCase.KILLED_BOTH
RR = BoundaryCase.REFLECTING_RIGHT
EI = BoundaryCase.ENTRANCE_INFINITY


def test_brownian_kernel_and_weights():
    m = build_diffusion(DiffusionSpec(0.0, 1.0, 1.0, KB, 65))
    x = m.x
    assert np.allclose(np.triu(m.W, 1), np.triu(x[None, :] - x[:, None], 1), atol=1e-15)
    h = 1 / 64
    assert np.allclose(m.w[1:-1], 2 * h) and m.w[-1] == pytest.approx(h)


def test_ou_scale_and_speed():
    m = build_diffusion(DiffusionSpec(lambda x: -x, 1.0, 1.0, KB, 1025))
    x = m.x
    s_ref = np.array([quad(lambda u: math.exp(u * u), 0, xi, epsabs=1e-14, epsrel=1e-13)[0] for xi in x[::64]])
    assert np.max(np.abs(m.extras["scale"][::64] - s_ref) / np.maximum(s_ref, 1e-300)) < 1e-6
    assert np.allclose(m.extras["speed_density"], 2 * np.exp(-x**2), rtol=1e-6)
    assert m.extras["quad_error"] < 1e-6


def test_gamblers_ruin_on_built_diffusion():
    m = build_diffusion(DiffusionSpec(0.0, 1.0, 1.0, KB, 513))
    assert exit_laplace(m, 0.0, 0, 128, 512)["down"] == pytest.approx(0.75, abs=1e-12)


def test_bad_sigma():
    with pytest.raises(ModelError):
        build_diffusion(DiffusionSpec(0.0, lambda x: x - 0.5, 1.0, KB, 65))
    with pytest.raises(ModelError):
        build_diffusion(DiffusionSpec(0.0, np.ones(10), 1.0, KB, 65))


def test_chain_hand_values():
    assert build_chain(two_state_chain()).W[0, 1] == 1.0
    r = np.zeros((2, 2))
    r[1, 0] = 2.0
    assert chain_scale_direct(ChainSpec(r), 0.0)[0, 1] == 0.5
    assert occupation_kernel(ChainSpec(r))[0, 1] == 0.5


def test_bd50_valid():
    m = build_chain(birth_death_chain(1.0, lambda n: n**2, 50, EI))
    assert validate(m).ok
    assert np.all(np.triu(m.W, 1)[np.triu_indices(51, 1)] > 0)


def test_not_skip_free():
    r = np.zeros((4, 4))
    r[1, 0] = r[2, 1] = r[3, 2] = 1.0
    r[3, 1] = 0.5
    with pytest.raises(ModelError, match="skip-free"):
        build_chain(ChainSpec(r))


def test_determinant_form():
    spec = birth_death_chain(lambda n: 1 + 0.3 * n, lambda n: 2 + n, 8, RR)
    Q = spec.rates - np.diag(spec.out_rates())
    d = spec.down_rates()
    for q in (0.0, -1.3, 2 + 1j):
        W = chain_scale_direct(spec, q)
        for u in range(1, 9):
            block = q * np.eye(u - 1) - Q[1:u, 1:u]
            ref = (np.linalg.det(block) if u > 1 else 1.0) / np.prod(d[1:u + 1])
            assert W[0, u] == pytest.approx(ref, rel=1e-10, abs=1e-14)


def test_two_state_zeros_are_eigenvalues():
    spec = two_state_chain()
    lam = np.sort(-np.linalg.eigvals(spec.sub_generator()).real)
    for l in lam:
        W = chain_scale_direct(spec, -l)
        # Z(0, x_N] = 1 + q sum_k W(0, k)
        assert abs(1 - l * W[0, 1:].sum()) < 1e-12


def test_window_independence():
    small = birth_death_chain(1.0, lambda n: n**2, 20, EI)
    big = birth_death_chain(1.0, lambda n: n**2, 40, EI)
    a = occupation_kernel(small)[:20, :20]
    b = occupation_kernel(big)[:20, :20]
    assert np.max(np.abs(a - b)) < 1e-10


def test_q_zero_matches_build(bd_entrance):
    spec, model = bd_entrance
    assert np.array_equal(chain_scale_direct(spec, 0.0), model.W)


def test_direct_resolvent_identity(bd_entrance):
    spec, _ = bd_entrance
    q, r = -2.0 + 1j, 3.0 - 0.5j
    Wq, Wr = chain_scale_direct(spec, q), chain_scale_direct(spec, r)
    D = np.r_[0.0, np.ones(spec.N)]
    assert np.max(np.abs(Wq - Wr - (q - r) * (Wq * D) @ Wr)) < 1e-9


@st.composite
def skip_free(draw):
    N = draw(st.integers(2, 9))
    r = np.zeros((N + 1, N + 1))
    for i in range(1, N + 1):
        r[i, i - 1] = draw(st.floats(0.2, 5))
        for j in range(i + 1, N + 1):
            if draw(st.booleans()):
                r[i, j] = draw(st.floats(0.0, 3))
    return ChainSpec(r, RR)


@given(skip_free(), st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False))
def test_recursion_matches_occupation(spec, q):
    a = chain_scale_direct(spec, q)
    b = occupation_kernel(spec, complex(q))
    assume_ok = np.all(np.isfinite(b))
    if assume_ok:
        iu = np.triu_indices(spec.N + 1, 1)
        assert np.allclose(a[iu], b[iu], rtol=1e-7, atol=1e-9)


@given(skip_free())
def test_exit_probabilities_monotone(spec):
    m = build_chain(spec)
    M = m.M
    down = [exit_laplace(m, 0.0, 0, k, M)["down"].real for k in range(0, M + 1)]
    assert all(-1e-12 <= d <= 1 + 1e-12 for d in down)
    assert all(a >= b - 1e-12 for a, b in zip(down, down[1:]))


def test_oracle_values():
    o = BMOracle(1.0, KB)
    assert complex(o.W(1.0, 0.0, 1.0)).real == pytest.approx(math.sinh(math.sqrt(2)) / math.sqrt(2), rel=1e-14)
    assert np.allclose(o.zeros(4), -np.arange(1, 5) ** 2 * math.pi**2 / 2)
    r = BMOracle(1.0, RR)
    x = np.linspace(0, 1, 11)
    assert np.allclose(r.qsd_density(x), math.pi / 2 * np.sin(math.pi * x / 2))


def test_documents():
    doc = {"schema_version": 1, "family": "chain", "boundary_case": "reflecting_right",
           "grid": {"n_states": 2}, "rates": [[1, 0, 1.0], [1, 2, 1.0], [2, 1, 1.0]]}
    m = model_from_document(doc)
    assert m.W[0, 2] == 2.0
    doc = {"schema_version": 1, "family": "diffusion", "boundary_case": "killed_both",
           "grid": {"n_points": 5, "ell": 1.0}, "drift": {"samples": [0, 0, 0, 0, 0]},
           "sigma": {"name": "constant", "value": 2.0}}
    assert model_from_document(doc).M == 4
    doc["drift"] = {"name": "wobbly"}
    with pytest.raises(ModelError):
        model_from_document(doc)
