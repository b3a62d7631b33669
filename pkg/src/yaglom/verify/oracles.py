"""Dense linear-algebra oracles: sub-generators, decay rates, transition operators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, lu_factor, lu_solve
from scipy.stats import poisson

from ..core import BoundaryCase, Model
from ..models import ChainSpec


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class SubGenerator:
    Q: np.ndarray
    kind: str  # "chain" or "fd"
    states: np.ndarray  # grid indices the rows refer to

    @property
    def scale(self) -> float:
        return float(np.max(np.abs(np.diag(self.Q))))

    @property
    def n(self) -> int:
        return self.Q.shape[0]


def chain_subgenerator(spec: ChainSpec) -> SubGenerator:
    Q = spec.sub_generator()
    return SubGenerator(Q, "chain", np.arange(1, Q.shape[0] + 1))


def fd_subgenerator(model: Model) -> SubGenerator:
    """Finite differences of sigma^2/2 f'' + b f' on the model grid.

    Dirichlet at 0 (and at ell when killed); ghost-point Neumann at a
    reflecting right end.  Drift switches to upwinding where central
    differences would produce a negative off-diagonal.
    """
    x = np.asarray(model.x)
    h = np.diff(x)
    if np.ptp(h) > 1e-9 * h.mean():
        raise OracleError("finite-difference oracle needs a uniform grid")
    h = float(h.mean())
    a = np.asarray(model.extras["sigma"]) ** 2 / 2
    b = np.asarray(model.extras["drift"])
    M = model.M
    lo = a / h**2 - b / (2 * h)
    up = a / h**2 + b / (2 * h)
    bad = (lo < 0) | (up < 0)
    lo = np.where(bad, a / h**2 + np.maximum(-b, 0) / h, lo)
    up = np.where(bad, a / h**2 + np.maximum(b, 0) / h, up)
    killed = model.case is BoundaryCase.KILLED_BOTH
    top = M - 1 if killed else M
    n = top
    Q = np.zeros((n, n))
    for k in range(1, top + 1):
        r = k - 1
        if k == M:  # reflecting: f_{M+1} = f_{M-1}
            Q[r, r - 1] = lo[k] + up[k]
            Q[r, r] = -(lo[k] + up[k])
            continue
        Q[r, r] = -(lo[k] + up[k])
        if k > 1:
            Q[r, r - 1] = lo[k]
        if k < top:
            Q[r, r + 1] = up[k]
    return SubGenerator(Q, "fd", np.arange(1, top + 1))


def subgenerator_for(model: Model) -> SubGenerator:
    if model.extras.get("family") == "chain":
        return chain_subgenerator(model.extras["spec"])
    return fd_subgenerator(model)


def _inverse_iteration(A, v, maxit=500, tol=1e-14):
    lu = lu_factor(A)
    lam = None
    # Rayleigh quotients carry roundoff of order eps * |A|
    floor = 1e2 * np.finfo(float).eps * np.abs(A).max()
    for _ in range(maxit):
        y = lu_solve(lu, v)
        v_new = y / np.linalg.norm(y)
        lam_new = float(v_new @ (A @ v_new))
        if lam is not None and abs(lam_new - lam) <= max(tol * max(1.0, abs(lam_new)), floor):
            return lam_new, v_new
        lam, v = lam_new, v_new
    raise OracleError(f"inverse iteration did not converge (last estimate {lam})")


def _perron(A, transpose=False):
    B = A.T if transpose else A
    n = B.shape[0]
    lam, v = _inverse_iteration(B, np.ones(n) / np.sqrt(n))
    # shifted refinement; the shift sits just below the estimate
    shift = lam * (1 - 1e-9) if lam != 0 else -1e-12
    lam, v = _inverse_iteration(B - shift * np.eye(n), v)
    lam += shift
    return lam, v * np.sign(v.sum())


def eig_decay_oracle(sub: SubGenerator, maxit: int = 500) -> dict:
    A = -np.asarray(sub.Q, dtype=float)
    n = A.shape[0]
    lam0, r = _perron(A)
    _, l = _perron(A, transpose=True)
    if np.any(r < -1e-12 * np.abs(r).max()) or np.any(l < -1e-12 * np.abs(l).max()):
        raise OracleError("Perron vectors are not positive: block not irreducible?")
    r = np.abs(r) / abs(r[-1])
    l = np.abs(l) / np.abs(l).sum()
    lam1 = None
    if n > 1:
        # Wielandt deflation pushes lam0 away; the remaining spectrum is unchanged
        c = 10 * (sub.scale + 1)
        A1 = A + c * np.outer(r, l) / (l @ r)
        rng = np.random.default_rng(0)
        try:
            lam1, _ = _inverse_iteration(A1, rng.standard_normal(n), maxit)
        except OracleError:
            lam1 = None
    res = float(np.max(np.abs(A @ r - lam0 * r)) / max(1.0, np.abs(A).max()))
    return {"lambda0": float(lam0), "lambda1": None if lam1 is None else float(lam1),
            "left_vec": l, "right_vec": r, "residual": res}


def transition_oracle(sub: SubGenerator, t: float, v, left: bool = False, tail: float = 1e-12):
    """exp(t Q) v (or v^T exp(t Q) with ``left``)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    v = np.asarray(v, dtype=float)
    Q = sub.Q.T if left else sub.Q
    if t == 0:
        return v.copy()
    if sub.kind != "chain":
        return expm(t * Q) @ v
    lam = sub.scale * (1 + 1e-12) or 1.0
    mu = lam * t
    if mu > 1e6:
        raise OracleError(f"uniformization rate*t = {mu:.3g} too large")
    P = np.eye(Q.shape[0]) + Q / lam
    K = int(poisson.isf(tail, mu)) + 2
    weights = poisson.pmf(np.arange(K + 1), mu)
    out = weights[0] * v
    term = v
    for k in range(1, K + 1):
        term = P @ term
        out = out + weights[k] * term
    return out


def hitting_time_oracle(spec: ChainSpec, b: int, top: int) -> np.ndarray:
    """E_x tau_b^- for x = b+1..top from (-Q restricted to (b, top]) tau = 1.

    The chain is cut at ``top`` by dropping jumps above it (reflection).
    """
    idx = np.arange(b + 1, top + 1)
    R = spec.rates[np.ix_(idx, idx)].copy()
    out = R.sum(axis=1) + spec.rates[idx, b]
    A = np.diag(out) - R
    return np.linalg.solve(A, np.ones(idx.size))
