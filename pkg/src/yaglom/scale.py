"""q-scale functions W^(q), Z^(q) on a grid, for complex q.

With strictly upper triangular tables the open-window product
``(f (x) g)(x_i, x_j) = sum_{i<k<j} f(x_i, x_k) g(x_k, x_j) w_k`` is the matrix
product ``F @ diag(w) @ G``.  The Volterra equation then reads
``Wq = A + q Wq D A`` and is solved by forward substitution against the unit
upper triangular matrix ``I - q D A``; no general linear solve is needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .core import BoundaryCase, Closure, Model, Truncation, as_complex

DEFAULT_TOL = 1e-10


class NearZeroError(ArithmeticError):
    """A denominator vanished: q sits (numerically) on a zero set."""


def strict_kernel(model: Model) -> np.ndarray:
    return np.triu(model.W, 1)


def _dtype_for(q) -> type:
    return float if np.isrealobj(q) or np.all(np.imag(q) == 0) else complex


def _cast(q, dtype):
    return float(np.real(q)) if dtype is float else complex(q)


def volterra_table(model: Model, q) -> np.ndarray:
    """Full table W^(q)(x_i, x_j), strictly upper triangular."""
    A = strict_kernel(model)
    dt = _dtype_for(q)
    q = _cast(q, dt)
    if q == 0:
        return A.astype(dt)
    B = np.eye(model.M + 1, dtype=dt) - q * (model.w[:, None] * A)
    # Wq B = A  <=>  B^T Wq^T = A^T
    return solve_triangular(B.T, A.T.astype(dt), lower=True, unit_diagonal=True).T


def wbar_max(model: Model) -> float:
    A = strict_kernel(model)
    return float(np.max(A @ model.w))


def series_table(model: Model, q, tol: float = DEFAULT_TOL, max_terms: int = 10_000):
    """Partial sums of sum_n q^n W^{(x)(n+1)} with a certified remainder.

    Returns ``(table, remainder_bound, n_terms)``; the bound is relative to
    W(x, y) and comes from W^{(x)n} <= W Wbar^{n-1}/(n-1)!.
    """
    A = strict_kernel(model)
    DA = model.w[:, None] * A
    dt = _dtype_for(q)
    q = _cast(q, dt)
    a = abs(q) * wbar_max(model)
    total = A.astype(dt)
    term = A.astype(dt)
    n = 0
    log_a = math.log(a) if a > 0 else -math.inf
    while True:
        n += 1
        # tail beyond the terms already summed: sum_{k>=n} a^k/k! <= a^n/n! e^a
        log_tail = n * log_a - math.lgamma(n + 1) + a
        if log_tail < math.log(tol) or not np.any(term):
            break
        if n > max_terms:
            raise RuntimeError(f"series did not reach tol={tol} within {max_terms} terms")
        term = q * (term @ DA)
        total = total + term
    bound = math.exp(log_tail) if np.any(term) else 0.0
    return total, bound, n


def term_bound_table(model: Model, n: int) -> np.ndarray:
    """W(x,y) Wbar(x,y)^n / n! on every pair (upper bound of |W^{(x)(n+1)}|)."""
    A = strict_kernel(model)
    Wb = open_wbar_table(model)
    return A * Wb**n / math.factorial(n)


def open_wbar_table(model: Model) -> np.ndarray:
    """Wbar(x_i, x_j) = sum_{i<k<j} W(x_i, x_k) w_k for all pairs."""
    A = strict_kernel(model)
    c = np.cumsum(A * model.w[None, :], axis=1)
    out = np.zeros_like(c)
    out[:, 1:] = c[:, :-1]
    return np.triu(out, 1)


def z_tables(model: Model, Wq: np.ndarray, q):
    """Open table Z(x_i, x_j) (i<j, 1 on/below diagonal) and the vector of
    windows (x_i, x_M] closed at the top."""
    c = np.cumsum(Wq * model.w[None, :], axis=1)
    openz = np.ones_like(c)
    openz[:, 1:] = 1 + q * c[:, :-1]
    openz = np.where(np.triu(np.ones(c.shape, dtype=bool), 1), openz, 1.0)
    zend = 1 + q * c[:, -1]  # Wq strictly upper: row sum runs over k > i
    return openz, zend


@dataclass(frozen=True)
class ScaleEval:
    q: complex
    Wq: np.ndarray
    Zq: np.ndarray
    Zq_end: np.ndarray
    trunc_error: float
    method: str
    model: Model

    @property
    def Zq_inf(self) -> Optional[np.ndarray]:
        if self.model.case is BoundaryCase.ENTRANCE_INFINITY:
            return self.Zq_end
        return None


def wq_eval(model: Model, q, method: str = "volterra", tol: float = DEFAULT_TOL) -> ScaleEval:
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = as_complex(q)
    method = method.lower()
    if method == "volterra":
        Wq, err = volterra_table(model, q), 0.0
    elif method == "series":
        Wq, err, _ = series_table(model, q, tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    qq = q.real if Wq.dtype == float else q
    Zq, Zend = z_tables(model, Wq, qq)
    return ScaleEval(q, Wq, Zq, Zend, err, method, model)


@dataclass(frozen=True)
class WindowValue:
    value: float
    closure: Closure
    truncated: bool = False

    def __float__(self) -> float:
        return float(self.value)


def wbar(model: Model, i: int, j: Optional[int] = None, closure: Optional[Closure] = None) -> WindowValue:
    """Wbar(x_i, x_j); ``j=None`` runs to the right end of the state space."""
    from .core import window_sum

    if j is None:
        j = model.M
        closure = closure or model.end_closure
        trunc = isinstance(model.grid.right_end, Truncation)
    else:
        closure = closure or Closure.OPEN
        trunc = False
    if not i < j and not (i == j and closure is Closure.OPEN):
        raise IndexError(f"need i < j, got ({i}, {j})")
    v = window_sum(model.measure, model.W[i], i, j, closure)
    return WindowValue(float(v), closure, trunc)


def zq_eval(ev: ScaleEval, i: int, j: Optional[int] = None) -> complex:
    """Z^(q)(x_i, x_j) on the open window, or Z^(q)(x_i) when ``j`` is None."""
    if j is None:
        if ev.model.case is not BoundaryCase.ENTRANCE_INFINITY:
            raise ValueError("Z^(q)(x) needs an entrance-at-infinity model")
        return complex(ev.Zq_end[i])
    if not i < j:
        if i == j:
            return 1.0 + 0j
        raise IndexError(f"need i <= j, got ({i}, {j})")
    return complex(ev.Zq[i, j])


def z_tail_bound(model: Model, q, i: int) -> float:
    """1 + |q| Wbar(x, inf) exp(|q| Wbar(x, inf)) evaluated at the truncation."""
    wb = float(wbar(model, i))
    return 1 + abs(q) * wb * math.exp(abs(q) * wb)


def exit_laplace(model: Model, q, i: int, k: int, j: int, ev: Optional[ScaleEval] = None) -> dict:
    """Two-sided exit transforms from x_k out of the window (x_i, x_j)."""
    if not (i <= k <= j and i < j):
        raise IndexError(f"need i <= k <= j, i < j; got ({i}, {k}, {j})")
    ev = ev or wq_eval(model, q)
    Wij = ev.Wq[i, j]
    if abs(Wij) < 1e-13 * max(1.0, float(np.max(np.abs(ev.Wq[i])))):
        raise NearZeroError(f"W^(q)(x_{i}, x_{j}) ~ 0 at q={q}: q near a zero")
    down = ev.Wq[k, j] / Wij if k > i else 1.0
    zkj = ev.Zq[k, j] if k < j else 1.0
    up = zkj - down * ev.Zq[i, j]
    return {"down": complex(down), "up": complex(up)}


# -- density of the resolvent of the killed process -------------------------


def density_table(model: Model, q, ev: Optional[ScaleEval] = None) -> np.ndarray:
    """r^(q)(x_i, x_u) for all grid pairs; rows/columns outside I are zero."""
    ev = ev or wq_eval(model, q)
    Wq = ev.Wq
    if model.case is BoundaryCase.KILLED_BOTH:
        top = Wq[:, model.M]
        denom = top[0]
    else:
        top = ev.Zq_end
        denom = top[0]
    if abs(denom) < 1e-12:
        raise NearZeroError(f"D(q) ~ 0 at q={q}")
    R = np.outer(top / denom, Wq[0]) - Wq
    S = np.zeros(model.M + 1, dtype=bool)
    S[model.state_indices()] = True
    R = R * S[:, None] * S[None, :]
    return R


def identity_residuals(model: Model, q, r) -> dict:
    """Max absolute residuals of the W, Z and resolvent-density identities."""
    q, r = as_complex(q), as_complex(r)
    eq, er = wq_eval(model, q), wq_eval(model, r)
    Wq, Wr = eq.Wq.astype(complex), er.Wq.astype(complex)
    w = model.w
    resW = max(
        np.abs(Wq - Wr - (q - r) * (Wq * w) @ Wr).max(),
        np.abs(Wq - Wr - (q - r) * (Wr * w) @ Wq).max(),
    )
    iu = np.triu(np.ones(Wq.shape, dtype=bool), 1)
    Zq_s = np.where(iu, eq.Zq, 0)
    Zr_s = np.where(iu, er.Zq, 0)
    lhs = np.where(iu, eq.Zq - er.Zq, 0)
    resZ = max(
        np.abs(lhs - (q - r) * np.where(iu, (Wq * w) @ Zr_s, 0)).max(),
        np.abs(lhs - (q - r) * np.where(iu, (Wr * w) @ Zq_s, 0)).max(),
    )
    # closed-top windows: Z(x, x_M] identity with Z(x_M, x_M] = 1
    resZ = max(resZ, np.abs(eq.Zq_end - er.Zq_end - (q - r) * (Wq * w) @ er.Zq_end).max())
    resR = None
    if q != r:
        try:
            Rq = density_table(model, q, eq).astype(complex)
            Rr = density_table(model, r, er).astype(complex)
            resR = float(np.abs(Rq - Rr - (r - q) * (Rq * w) @ Rr).max())
        except NearZeroError:
            resR = None
    else:
        resR = 0.0
    # the same residuals divided by the size of the terms; absolute values are
    # meaningless once the tables grow like |q|^M (long chains, large |q|)
    sW = max(1.0, float(np.abs(Wq).max()), float(np.abs(Wr).max()))
    sZ = max(1.0, float(np.abs(eq.Zq).max()), float(np.abs(er.Zq).max()), float(np.abs(eq.Zq_end).max()))
    return {"resW": float(resW), "resZ": float(resZ), "resR": resR,
            "relW": float(resW) / sW, "relZ": float(resZ) / sZ,
            "relR": None if resR is None else resR / sW}


# -- batched single-row / single-column evaluations --------------------------


class RowColumnEvaluator:
    """Evaluate W^(q)(0, .), Z^(q)(., x_M] and W^(q)(., x_M) for many q at once.

    Each is one sequential sweep (the forward/backward substitution of the
    Volterra system) vectorised over the batch of q values.
    """

    def __init__(self, model: Model):
        self.model = model
        A = strict_kernel(model)
        w = model.w
        self.M = model.M
        self.w = w
        self.a0 = A[0].copy()
        self.DAT = np.ascontiguousarray((w[:, None] * A).T)  # row j: w_k A[k, j]
        self.AD = np.ascontiguousarray(A * w[None, :])  # row i: A[i, k] w_k
        self.AcolM = A[:, -1].copy()

    @staticmethod
    def _prep(qs):
        qs = np.atleast_1d(np.asarray(qs))
        if np.iscomplexobj(qs) and np.all(qs.imag == 0):
            qs = qs.real
        return qs.astype(float if not np.iscomplexobj(qs) else complex)

    def row0(self, qs) -> np.ndarray:
        qs = self._prep(qs)
        M = self.M
        out = np.zeros((qs.size, M + 1), dtype=qs.dtype)
        out[:, 1] = self.a0[1]
        for j in range(2, M + 1):
            out[:, j] = self.a0[j] + qs * (out[:, 1:j] @ self.DAT[j, 1:j])
        return out

    def zcol(self, qs) -> np.ndarray:
        """Z^(q)(x_i, x_M] for i = 0..M."""
        qs = self._prep(qs)
        M = self.M
        out = np.ones((qs.size, M + 1), dtype=qs.dtype)
        for i in range(M - 1, -1, -1):
            out[:, i] = 1 + qs * (out[:, i + 1:] @ self.AD[i, i + 1:])
        return out

    def wcol(self, qs) -> np.ndarray:
        """W^(q)(x_i, x_M) for i = 0..M."""
        qs = self._prep(qs)
        M = self.M
        out = np.zeros((qs.size, M + 1), dtype=qs.dtype)
        out[:, M - 1] = self.AcolM[M - 1]
        for i in range(M - 2, -1, -1):
            out[:, i] = self.AcolM[i] + qs * (out[:, i + 1:M] @ self.AD[i, i + 1:M])
        return out


class SeparableEvaluator:
    """Same sweeps for kernels of the form W(x_i, x_j) = s_j - s_i.

    Window sums against (s_j - s_k) reduce to two running sums, so each sweep
    costs O(M) per q instead of O(M^2).
    """

    def __init__(self, model: Model, s: np.ndarray):
        self.model = model
        self.M = model.M
        self.w = model.w
        self.s = np.asarray(s, dtype=float)

    _prep = staticmethod(RowColumnEvaluator._prep)

    def row0(self, qs) -> np.ndarray:
        qs = self._prep(qs)
        s, w, M = self.s, self.w, self.M
        out = np.zeros((qs.size, M + 1), dtype=qs.dtype)
        S1 = np.zeros(qs.size, dtype=qs.dtype)
        S2 = np.zeros(qs.size, dtype=qs.dtype)
        for j in range(1, M + 1):
            out[:, j] = (s[j] - s[0]) + qs * (s[j] * S1 - S2)
            t = out[:, j] * w[j]
            S1 += t
            S2 += t * s[j]
        return out

    def _backward(self, qs, base, top):
        s, w = self.s, self.w
        out = np.zeros((qs.size, self.M + 1), dtype=qs.dtype)
        T1 = np.zeros(qs.size, dtype=qs.dtype)
        T2 = np.zeros(qs.size, dtype=qs.dtype)
        for i in range(top, -1, -1):
            out[:, i] = base(i) + qs * (T2 - s[i] * T1)
            t = out[:, i] * w[i]
            T1 += t
            T2 += t * s[i]
        return out

    def zcol(self, qs) -> np.ndarray:
        qs = self._prep(qs)
        return self._backward(qs, lambda i: 1.0, self.M)

    def wcol(self, qs) -> np.ndarray:
        qs = self._prep(qs)
        sM = self.s[self.M]
        return self._backward(qs, lambda i: sM - self.s[i], self.M - 1)


def separable_scale(model: Model, rtol: float = 1e-12) -> Optional[np.ndarray]:
    """Return s with W(x_i, x_j) = s_j - s_i on i < j, or None."""
    W = strict_kernel(model)
    s = W[0].copy()
    R = np.triu(s[None, :] - s[:, None], 1)
    if np.max(np.abs(R - W)) <= rtol * max(1.0, float(np.max(np.abs(W)))):
        return s
    return None


class ChainEvaluator(RowColumnEvaluator):
    """Skip-free chains: W^(q)(0, .) and D from the minor recursion.

    ``d_{s+1} W(0, s+1) = (q + r_s) W(0, s) - sum_{j<s} rate(j->s) W(0, j)`` is
    a Sturm-type recurrence for det(q - Q)/prod d, backward stable in the
    rates.  Summing the Volterra series for D instead loses digits to
    cancellation, which shows up in clustered zeros.
    """

    def __init__(self, model: Model, rates: np.ndarray, down: np.ndarray):
        super().__init__(model)
        self.rates = np.asarray(rates, dtype=float)
        self.d = np.asarray(down, dtype=float)
        self.r = self.rates.sum(axis=1)
        up = np.triu(self.rates, 1)
        self.feeds = [(np.flatnonzero(up[:s, s]), up[:s, s][up[:s, s] > 0]) for s in range(self.M + 1)]

    def _sweep(self, qs, stop):
        """Rows W(0, 0..stop) and their q-derivatives; ``stop`` may be M + 1 (d = 1 there)."""
        n = qs.size
        W = np.zeros((n, stop + 1), dtype=qs.dtype)
        dW = np.zeros_like(W)
        W[:, 1] = 1.0 / self.d[1]
        for s in range(1, stop):
            js, rt = self.feeds[s]
            acc = (qs + self.r[s]) * W[:, s]
            dacc = W[:, s] + (qs + self.r[s]) * dW[:, s]
            if js.size:
                acc = acc - W[:, js] @ rt
                dacc = dacc - dW[:, js] @ rt
            dn = self.d[s + 1] if s + 1 <= self.M else 1.0
            W[:, s + 1] = acc / dn
            dW[:, s + 1] = dacc / dn
        return W, dW

    def row0(self, qs) -> np.ndarray:
        qs = self._prep(qs)
        return self._sweep(qs, self.M)[0]

    def D_and_prime(self, qs, killed: bool):
        qs = self._prep(qs)
        stop = self.M if killed else self.M + 1
        W, dW = self._sweep(qs, stop)
        return W[:, stop], dW[:, stop]


def make_evaluator(model: Model):
    spec = model.extras.get("spec")
    if model.extras.get("family") == "chain" and spec is not None:
        d = np.zeros(model.M + 1)
        d[1:] = np.diagonal(spec.rates, -1)
        if model.case is BoundaryCase.KILLED_BOTH and d[-1] <= 0:
            d[-1] = 1.0
        return ChainEvaluator(model, spec.rates, d)
    s = separable_scale(model)
    if s is not None:
        return SeparableEvaluator(model, s)
    return RowColumnEvaluator(model)
