"""Model families: diffusions, downward skip-free chains, closed-form Brownian motion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .core import (
    Boundary,
    BoundaryCase,
    MeasureKind,
    Model,
    ReferenceMeasure,
    ScaleKernel,
    StateGrid,
    Truncation,
    validate,
)


class ModelError(ValueError):
    pass


Coefficient = Union[Callable[[np.ndarray], np.ndarray], Sequence[float], np.ndarray, float]


def _sample(c: Coefficient, x: np.ndarray) -> np.ndarray:
    if callable(c):
        v = np.asarray(c(x), dtype=float)
        return np.broadcast_to(v, x.shape).astype(float)
    v = np.asarray(c, dtype=float)
    if v.ndim == 0:
        return np.full(x.shape, float(v))
    if v.shape != x.shape:
        raise ModelError(f"sampled coefficient has {v.size} values, grid has {x.size}")
    return v


def _right_end(case: BoundaryCase, top: float):
    if case is BoundaryCase.ENTRANCE_INFINITY:
        return Truncation(top)
    return Boundary(top)


def trapezoid_weights(x: np.ndarray, density: np.ndarray) -> np.ndarray:
    """Cell masses density_k * (x_{k+1} - x_{k-1}) / 2, half cell at the top."""
    w = np.zeros_like(x)
    w[1:-1] = density[1:-1] * (x[2:] - x[:-2]) / 2
    w[-1] = density[-1] * (x[-1] - x[-2]) / 2
    return w


# -- diffusions ---------------------------------------------------------------


@dataclass(frozen=True)
class DiffusionSpec:
    drift: Coefficient
    sigma: Coefficient
    ell: float
    case: BoundaryCase = BoundaryCase.KILLED_BOTH
    n_points: int = 513


def _scale_and_density(x, b, sig):
    g = 2 * b / sig**2
    s_prime = np.exp(-cumulative_trapezoid(g, x, initial=0.0))
    s = cumulative_trapezoid(s_prime, x, initial=0.0)
    return s, s_prime, 2.0 / (sig**2 * s_prime)


def build_diffusion(spec: DiffusionSpec) -> Model:
    if spec.n_points < 3:
        raise ModelError("need at least 3 grid points")
    if not spec.ell > 0:
        raise ModelError("ell must be positive")
    x = np.linspace(0.0, spec.ell, spec.n_points)
    b = _sample(spec.drift, x)
    sig = _sample(spec.sigma, x)
    if not np.all(sig > 0):
        raise ModelError(f"sigma must be positive, min sample {sig.min()}")
    s, s_prime, dens = _scale_and_density(x, b, sig)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(dens))):
        raise ModelError("non-finite scale or speed quadrature")
    # Richardson estimate from the half-resolution grid
    quad_err = 0.0
    if spec.n_points % 2 == 1 and spec.n_points >= 5:
        s2, _, _ = _scale_and_density(x[::2], b[::2], sig[::2])
        quad_err = float(np.max(np.abs(s[::2] - s2)) / 3)
    W = np.triu(s[None, :] - s[:, None], 1)
    w = trapezoid_weights(x, dens)
    w[0] = 0.0
    model = Model(
        StateGrid(x, _right_end(spec.case, spec.ell)),
        ReferenceMeasure(w, MeasureKind.DIFFUSE),
        ScaleKernel(W, diag_zero=True),
        spec.case,
        name="diffusion",
        extras={
            "family": "diffusion",
            "drift": b,
            "sigma": sig,
            "scale": s,
            "scale_prime": s_prime,
            "speed_density": dens,
            "quad_error": quad_err,
        },
    )
    _check(model)
    return model


def _check(model: Model) -> None:
    rep = validate(model)
    if not rep.ok:
        raise ModelError("; ".join(f"{v.code}: {v.message}" for v in rep.violations))


# -- closed-form Brownian motion ---------------------------------------------


def _sinhc(q, d):
    """sinh(sqrt(2q) d)/sqrt(2q), entire in q."""
    q = np.asarray(q, dtype=complex)
    d = np.asarray(d, dtype=float)
    z = np.sqrt(2 * q)
    small = np.abs(z) < 1e-8
    zs = np.where(small, 1.0, z)
    val = np.sinh(zs * d) / zs
    return np.where(small, d * (1 + (2 * q) * d**2 / 6), val)


def _cosh2(q, d):
    return np.cosh(np.sqrt(2 * np.asarray(q, dtype=complex)) * np.asarray(d, dtype=float))


@dataclass(frozen=True)
class ClosedFormBM:
    ell: float = 1.0
    case: BoundaryCase = BoundaryCase.KILLED_BOTH
    n_points: int = 513


@dataclass(frozen=True)
class BMOracle:
    """Closed forms for Brownian motion (generator f''/2) on (0, ell)."""

    ell: float
    case: BoundaryCase

    def W(self, q, x, y):
        d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        return np.where(d > 0, _sinhc(q, np.maximum(d, 0)), 0.0)

    def Z(self, q, x, y):
        d = np.maximum(np.asarray(y, dtype=float) - np.asarray(x, dtype=float), 0)
        return _cosh2(q, d)

    def zeros(self, kmax: int = 10) -> np.ndarray:
        k = np.arange(1, kmax + 1, dtype=float)
        if self.case is BoundaryCase.KILLED_BOTH:
            return -(k**2) * math.pi**2 / (2 * self.ell**2)
        return -((k - 0.5) ** 2) * math.pi**2 / (2 * self.ell**2)

    @property
    def lambda0(self) -> float:
        return float(-self.zeros(1)[0])

    @property
    def gap(self) -> float:
        z = self.zeros(2)
        return float(z[0] - z[1])

    @property
    def _theta(self) -> float:
        return math.sqrt(2 * self.lambda0)

    def qsd_density(self, x):
        """QSD density with respect to Lebesgue measure."""
        th = self._theta
        x = np.asarray(x, dtype=float)
        if self.case is BoundaryCase.KILLED_BOTH:
            return (math.pi / (2 * self.ell)) * np.sin(th * x)
        return th * np.sin(th * x)

    def invariant_function(self, x):
        th = self._theta
        x = np.asarray(x, dtype=float)
        if self.case is BoundaryCase.KILLED_BOTH:
            return np.sin(th * (self.ell - x)) / th
        return np.cos(th * (self.ell - x))

    @property
    def rho(self) -> float:
        if self.case is BoundaryCase.KILLED_BOTH:
            return self.ell**3 / math.pi**2
        return 2 * self.ell**2 / math.pi

    def D(self, q):
        if self.case is BoundaryCase.KILLED_BOTH:
            return _sinhc(q, self.ell)
        return _cosh2(q, self.ell)


def build_bm_closed_form(spec: ClosedFormBM):
    model = build_diffusion(DiffusionSpec(0.0, 1.0, spec.ell, spec.case, spec.n_points))
    oracle = BMOracle(spec.ell, spec.case)
    # exact kernel: s(x) = x, speed density 2
    x = model.x
    W = np.triu(x[None, :] - x[:, None], 1)
    w = trapezoid_weights(x, np.full_like(x, 2.0))
    w[0] = 0.0
    extras = dict(model.extras, family="bm_closed_form", oracle=oracle)
    model = Model(
        model.grid,
        ReferenceMeasure(w, MeasureKind.DIFFUSE),
        ScaleKernel(W, True),
        spec.case,
        name="bm_closed_form",
        extras=extras,
    )
    return model, oracle


# -- downward skip-free chains ------------------------------------------------


@dataclass(frozen=True)
class ChainSpec:
    """Rates ``rates[i, j]`` for i -> j on states 0..N (row 0 ignored).

    For KILLED_BOTH the top state N plays the killing boundary ell; only its
    down rate enters (as a normalisation of W(., ell)).
    """

    rates: np.ndarray
    case: BoundaryCase = BoundaryCase.REFLECTING_RIGHT
    name: str = "chain"

    def __post_init__(self):
        r = np.array(self.rates, dtype=float)
        np.fill_diagonal(r, 0.0)
        r[0] = 0.0
        r.setflags(write=False)
        object.__setattr__(self, "rates", r)

    @property
    def N(self) -> int:
        return self.rates.shape[0] - 1

    def down_rates(self) -> np.ndarray:
        """d_k = rate k -> k-1 for k = 1..N (index 0 unused)."""
        d = np.zeros(self.N + 1)
        d[1:] = np.diagonal(self.rates, -1)
        return d

    def out_rates(self) -> np.ndarray:
        return self.rates.sum(axis=1)

    def sub_generator(self) -> np.ndarray:
        """Generator restricted to the transient states of the case."""
        Q = self.rates - np.diag(self.out_rates())
        top = self.N - 1 if self.case is BoundaryCase.KILLED_BOTH else self.N
        return Q[1:top + 1, 1:top + 1]


def check_chain(spec: ChainSpec) -> list:
    problems = []
    r = spec.rates
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        return ["rates must be a square table"]
    if spec.N < 1:
        problems.append("need at least 1 state")
    if not np.all(np.isfinite(r)):
        problems.append("non-finite rates")
    if np.any(r < 0):
        problems.append("negative rate")
    jumps = np.argwhere(np.tril(r, -2) > 0)
    if jumps.size:
        i, j = jumps[0]
        problems.append(f"not downward skip-free: rate {i}->{j}")
    d = spec.down_rates()
    top = spec.N - 1 if spec.case is BoundaryCase.KILLED_BOTH else spec.N
    if np.any(d[1:top + 1] <= 0):
        k = int(np.flatnonzero(d[1:top + 1] <= 0)[0]) + 1
        problems.append(f"state {k} cannot step down (reducible chain)")
    return problems


def _d_eff(spec: ChainSpec) -> np.ndarray:
    d = spec.down_rates()
    if spec.case is BoundaryCase.KILLED_BOTH and d[-1] <= 0:
        d = d.copy()
        d[-1] = 1.0
    return d


def chain_scale_direct(spec: ChainSpec, q=0.0) -> np.ndarray:
    """W^(q)(a, u) for all 0 <= a < u <= N.

    W^(q)(a, u) = det(qI - Q on states strictly between a and u) / prod_{a<k<=u} d_k,
    evaluated through the normalised Hessenberg minor recursion
    d_{s+1} W(a, s+1) = (q + r_s) W(a, s) - sum_{j<s} rate(j->s) W(a, j).
    """
    problems = check_chain(spec)
    if problems:
        raise ModelError("; ".join(problems))
    N = spec.N
    dt = complex if np.iscomplexobj(q) and np.imag(q) != 0 else float
    q = complex(q) if dt is complex else float(np.real(q))
    d = _d_eff(spec)
    r = spec.out_rates()
    up = np.triu(spec.rates, 1)
    cols = [np.flatnonzero(up[:, s]) for s in range(N + 1)]
    W = np.zeros((N + 1, N + 1), dtype=dt)
    W[0, 1] = 1.0 / d[1]
    for s in range(1, N):
        acc = (q + r[s]) * W[:, s]
        js = cols[s]
        js = js[js < s]
        if js.size:
            acc = acc - W[:, js] @ up[js, s]
        W[:, s + 1] = acc / d[s + 1]
        W[s, s + 1] = 1.0 / d[s + 1]
    return W


def occupation_kernel(spec: ChainSpec, q=0.0, rows: Optional[Sequence[int]] = None) -> np.ndarray:
    """W^(q)(a, u) = G(u, u) / h(u) from windowed linear solves.

    The window for row a is (a, N+1), N+1 being an unreachable ghost state;
    G is the q-killed occupation density and h the down-exit transform.
    """
    N = spec.N
    d = _d_eff(spec)
    Qfull = spec.rates - np.diag(spec.out_rates())
    out = np.zeros((N + 1, N + 1), dtype=complex if np.iscomplexobj(q) else float)
    for a in rows if rows is not None else range(N):
        idx = np.arange(a + 1, N + 1)
        Mq = q * np.eye(idx.size) - Qfull[np.ix_(idx, idx)]
        G = np.linalg.inv(Mq)
        h = G[:, 0] * d[a + 1]
        out[a, a + 1:] = np.diagonal(G) / h
    return out


def build_chain(spec: ChainSpec) -> Model:
    problems = check_chain(spec)
    if problems:
        raise ModelError("; ".join(problems))
    N = spec.N
    W = chain_scale_direct(spec, 0.0).real
    x = np.arange(N + 1, dtype=float)
    w = np.ones(N + 1)
    w[0] = 0.0
    model = Model(
        StateGrid(x, _right_end(spec.case, float(N))),
        ReferenceMeasure(w, MeasureKind.ATOMIC),
        ScaleKernel(W, diag_zero=True),
        spec.case,
        name=spec.name,
        extras={"family": "chain", "spec": spec},
    )
    _check(model)
    return model


def two_state_chain(a: float = 1.0, b: float = 1.0, c: float = 1.0) -> ChainSpec:
    """States {1, 2}: 1 -> 0 at rate a, 1 -> 2 at rate b, 2 -> 1 at rate c."""
    r = np.zeros((3, 3))
    r[1, 0], r[1, 2], r[2, 1] = a, b, c
    return ChainSpec(r, BoundaryCase.REFLECTING_RIGHT, name="two_state")


def birth_death_chain(
    birth: Union[Callable, Sequence[float], float],
    death: Union[Callable, Sequence[float], float],
    N: int,
    case: BoundaryCase = BoundaryCase.ENTRANCE_INFINITY,
    name: str = "birth_death",
) -> ChainSpec:
    """Birth rates lambda_n (n -> n+1) and death rates mu_n (n -> n-1), n = 1..N.

    The birth rate out of N is dropped: the truncated chain reflects at N.
    """
    n = np.arange(1, N + 1, dtype=float)
    lam = _sample(birth, n)
    mu = _sample(death, n)
    r = np.zeros((N + 1, N + 1))
    for k in range(1, N + 1):
        r[k, k - 1] = mu[k - 1]
        if k < N:
            r[k, k + 1] = lam[k - 1]
    return ChainSpec(r, case, name=name)


# -- documents ---------------------------------------------------------------

_BUILTIN_DRIFT = {
    "zero": lambda p: (lambda x: np.zeros_like(x)),
    "constant": lambda p: (lambda x: np.full_like(x, float(p.get("value", 0.0)))),
    "linear": lambda p: (lambda x: float(p.get("slope", -1.0)) * x + float(p.get("intercept", 0.0))),
}
_BUILTIN_SIGMA = {
    "constant": lambda p: (lambda x: np.full_like(x, float(p.get("value", 1.0)))),
}


def _coef(desc, table, what):
    if "samples" in desc:
        return np.asarray(desc["samples"], dtype=float)
    name = desc.get("name")
    if name not in table:
        raise ModelError(f"unknown built-in {what} {name!r}")
    return table[name](desc)


def _rate_fn(desc):
    if isinstance(desc, (int, float)):
        return float(desc)
    if isinstance(desc, list):
        return np.asarray(desc, dtype=float)
    coef = float(desc.get("coef", 1.0))
    power = float(desc.get("power", 0.0))
    const = float(desc.get("const", 0.0))
    return lambda n: coef * n**power + const


def model_from_document(doc: dict, n_override: Optional[int] = None) -> Model:
    """Build a model from a (schema-validated) model document."""
    case = BoundaryCase(doc["boundary_case"])
    fam = doc["family"]
    grid = doc.get("grid", {})
    if fam == "bm_closed_form":
        n = n_override or grid.get("n_points", 513)
        model, _ = build_bm_closed_form(ClosedFormBM(float(grid.get("ell", 1.0)), case, n))
        return model
    if fam == "diffusion":
        n = n_override or grid.get("n_points", 513)
        spec = DiffusionSpec(
            _coef(doc["drift"], _BUILTIN_DRIFT, "drift"),
            _coef(doc["sigma"], _BUILTIN_SIGMA, "sigma"),
            float(grid.get("ell", 1.0)),
            case,
            n,
        )
        return build_diffusion(spec)
    if fam == "chain":
        return build_chain(chain_spec_from_document(doc, n_override))
    raise ModelError(f"unknown family {fam!r}")


def chain_spec_from_document(doc: dict, n_override: Optional[int] = None) -> ChainSpec:
    case = BoundaryCase(doc["boundary_case"])
    name = doc.get("name", "chain")
    if "birth_death" in doc:
        bd = doc["birth_death"]
        N = n_override or int(doc.get("grid", {}).get("n_states", bd.get("n_states", 50)))
        return birth_death_chain(_rate_fn(bd["birth"]), _rate_fn(bd["death"]), N, case, name)
    N = int(doc["grid"]["n_states"])
    r = np.zeros((N + 1, N + 1))
    for i, j, rate in doc["rates"]:
        if not (1 <= i <= N and 0 <= j <= N):
            raise ModelError(f"rate ({i}, {j}) outside states 0..{N}")
        r[int(i), int(j)] = float(rate)
    return ChainSpec(r, case, name)
