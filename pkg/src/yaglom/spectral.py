"""Zeros of the case-dependent entire function D(q) and boundary classification."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .core import BoundaryCase, Closure, Model, Truncation
from .scale import make_evaluator


class SpectralError(RuntimeError):
    pass


class TheoremViolation(SpectralError):
    """A numerically detected contradiction of a proven property (e.g. no gap)."""


class InconclusiveError(SpectralError):
    pass


class DKind(enum.Enum):
    Z_INFINITY = "z_infinity"
    Z_INTERVAL = "z_interval"
    W_INTERVAL = "w_interval"


_KIND_FOR = {
    BoundaryCase.ENTRANCE_INFINITY: DKind.Z_INFINITY,
    BoundaryCase.REFLECTING_RIGHT: DKind.Z_INTERVAL,
    BoundaryCase.KILLED_BOTH: DKind.W_INTERVAL,
}


@dataclass(frozen=True)
class SpectralProblem:
    model: Model
    kind: Optional[DKind] = None
    lambda_max: float = 50.0
    B: float = 20.0
    newton_tol: float = 1e-12
    newton_maxit: int = 50

    def __post_init__(self):
        want = _KIND_FOR[self.model.case]
        if self.kind is None:
            object.__setattr__(self, "kind", want)
        elif self.kind is not want:
            raise ValueError(f"D kind {self.kind.value} inconsistent with {self.model.case.value}")
        if not self.lambda_max > 0 or self.B < 0:
            raise ValueError("need lambda_max > 0 and B >= 0")
        object.__setattr__(self, "_ev", make_evaluator(self.model))

    @property
    def truncated(self) -> bool:
        return isinstance(self.model.grid.right_end, Truncation)

    @property
    def box(self) -> Tuple[float, float, float, float]:
        return (-self.lambda_max, 1.0, -self.B, self.B)


# -- D and D' ------------------------------------------------------------------


def D_batch(problem: SpectralProblem, qs) -> np.ndarray:
    ev = problem._ev
    if hasattr(ev, "D_and_prime"):
        return ev.D_and_prime(qs, problem.kind is DKind.W_INTERVAL)[0]
    if problem.kind is DKind.W_INTERVAL:
        return ev.row0(qs)[:, -1]
    return ev.zcol(qs)[:, 0]


def D_and_prime(problem: SpectralProblem, qs) -> Tuple[np.ndarray, np.ndarray]:
    ev = problem._ev
    if hasattr(ev, "D_and_prime"):
        return ev.D_and_prime(qs, problem.kind is DKind.W_INTERVAL)
    w = problem.model.w
    r = ev.row0(qs)
    if problem.kind is DKind.W_INTERVAL:
        c = ev.wcol(qs)
        return r[:, -1], (r[:, 1:-1] * c[:, 1:-1]) @ w[1:-1]
    c = ev.zcol(qs)
    return c[:, 0], (r[:, 1:] * c[:, 1:]) @ w[1:]


def eval_D(problem: SpectralProblem, q) -> complex:
    return complex(D_batch(problem, np.array([complex(q)]))[0])


def eval_D_prime(problem: SpectralProblem, q) -> complex:
    return complex(D_and_prime(problem, np.array([complex(q)]))[1][0])


# -- decay parameter -----------------------------------------------------------


@dataclass(frozen=True)
class DecayResult:
    lambda0: float
    residual: float
    derivative: float
    simple: bool
    method: str


def _wbar_end(model: Model) -> float:
    W = np.triu(model.W, 1)
    return float(W[0] @ model.w)


def decay_parameter(problem: SpectralProblem, substeps: int = 8) -> DecayResult:
    model = problem.model
    if problem.kind is DKind.Z_INFINITY and model.extras.get("entrance") is False:
        raise SpectralError("decay parameter needs an entrance boundary at infinity")
    lo = min(1e-3, 0.01 / max(_wbar_end(model), 1e-300))
    n = int(math.ceil(math.log(problem.lambda_max / lo) / math.log(1.5) * substeps)) + 1
    lam = np.geomspace(lo, problem.lambda_max, n)
    vals = D_batch(problem, -lam).real
    d0 = D_batch(problem, np.array([0.0])).real[0]
    signs = np.sign(np.concatenate([[d0], vals]))
    flips = np.flatnonzero(signs[1:] * signs[:-1] <= 0)
    if flips.size == 0:
        raise SpectralError("Lambda_max too small or no zero")
    k = flips[0]
    a = 0.0 if k == 0 else lam[k - 1]
    b = lam[k]

    def f(x):
        return float(D_batch(problem, np.array([-x])).real[0])

    if f(b) == 0.0:
        root = b
    else:
        root = brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    method = "brentq"
    # Newton polish with the analytic derivative: d/dlam D(-lam) = -D'(-lam)
    Dv, Dp = (v[0] for v in D_and_prime(problem, np.array([-root])))
    for _ in range(problem.newton_maxit):
        if Dp == 0:
            break
        step = (Dv / Dp).real
        cand = root + step
        Dc, Dpc = (v[0] for v in D_and_prime(problem, np.array([-cand])))
        if abs(Dc) > abs(Dv):
            break
        root, Dv, Dp = cand, Dc, Dpc
        method = "brentq+newton"
        if abs(step) <= problem.newton_tol * max(1.0, abs(root)):
            break
    scale = max(1.0, float(np.max(np.abs(vals[: k + 1]))), abs(d0))
    simple = abs(Dp.real) * max(root, 1e-300) > 1e-8 * scale
    return DecayResult(float(root), float(abs(Dv)), float(Dp.real), bool(simple), method)


# -- argument principle ----------------------------------------------------------

_GL_N = 16
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_N)
_SPLIT_FRACTIONS = (0.4713, 0.3819, 0.5617, 0.4271, 0.5303, 0.3347, 0.6131)


@dataclass(frozen=True)
class Certificate:
    rect: Tuple[float, float, float, float]
    winding: int
    raw: float
    status: str = "ok"


@dataclass(frozen=True)
class SpectrumReport:
    lambda0: Optional[float]
    lambda1: Optional[float]
    zeros: Tuple[complex, ...]
    residuals: Tuple[float, ...]
    gap: Optional[float]
    certificates: Tuple[Certificate, ...]
    box: Tuple[float, float, float, float]
    caveat: str = ""
    cells: Tuple[int, ...] = ()

    @property
    def count(self) -> int:
        return sum(c.winding for c in self.certificates)


def _edges(rect):
    x0, x1, y0, y1 = rect
    c = [complex(x0, y0), complex(x1, y0), complex(x1, y1), complex(x0, y1)]
    return [(c[i], c[(i + 1) % 4]) for i in range(4)]


def _panel_nodes(panels):
    a = np.array([p[0] for p in panels])
    b = np.array([p[1] for p in panels])
    mid, half = (a + b) / 2, (b - a) / 2
    nodes = mid[:, None] + half[:, None] * _GL_X[None, :]
    return nodes, half


def _logderiv(problem, q):
    D, Dp = D_and_prime(problem, q.ravel())
    return (Dp / D).reshape(q.shape), np.abs(D).reshape(q.shape)


def _contour_moments(problem, rect, K, center, radius, tol=1e-10, max_rounds=40):
    """(1/2 pi i) closed integral of ((q-c)/r)^k D'/D, k = 0..K, with adaptive GL panels."""
    panels = []
    for a, b in _edges(rect):
        for t in range(8):
            panels.append((a + (b - a) * t / 8, a + (b - a) * (t + 1) / 8))

    def integrate(pans):
        nodes, half = _panel_nodes(pans)
        f, absD = _logderiv(problem, nodes)
        z = (nodes - center) / radius
        powers = z[..., None] ** np.arange(K + 1)
        vals = np.einsum("pn,pnk,n->pk", f, powers, _GL_W) * half[:, None]
        return vals, absD.min(axis=1)

    vals, mins = integrate(panels)
    total = np.zeros(K + 1, dtype=complex)
    min_absD = float(mins.min())
    pending = list(zip(panels, vals))
    for _ in range(max_rounds):
        if not pending:
            break
        kids = []
        for (a, b), _v in pending:
            m = (a + b) / 2
            kids.extend([(a, m), (m, b)])
        kv, km = integrate(kids)
        min_absD = min(min_absD, float(km.min()))
        nxt = []
        for idx, (p, v) in enumerate(pending):
            s = kv[2 * idx] + kv[2 * idx + 1]
            if np.max(np.abs(s - v)) <= tol * max(1.0, abs(p[1] - p[0])):
                total += s
            else:
                nxt.append((kids[2 * idx], kv[2 * idx]))
                nxt.append((kids[2 * idx + 1], kv[2 * idx + 1]))
        pending = nxt
    converged = not pending
    for _p, v in pending:
        total += v
    return total / (2j * math.pi), converged, min_absD


def _newton(problem, q, tol, maxit):
    for _ in range(maxit):
        D, Dp = (v[0] for v in D_and_prime(problem, np.array([q])))
        if Dp == 0:
            break
        step = D / Dp
        q = q - step
        if abs(step) <= tol * max(1.0, abs(q)):
            break
    D = complex(D_batch(problem, np.array([q]))[0])
    return q, abs(D)


def _line_clear(problem, a: complex, b: complex, n: int = 64) -> bool:
    q = a + (b - a) * (np.arange(n) + 0.5) / n
    D, Dp = D_and_prime(problem, q)
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = np.abs(D / Dp)
    dist = np.where(np.isfinite(dist), dist, np.inf)
    return bool(np.min(dist) > 0.25 * abs(b - a) / n)


def _perturb_rect(problem, rect):
    """Nudge the edges outward until no zero sits (numerically) on them."""
    x0, x1, y0, y1 = rect
    w = max(x1 - x0, 1e-12)
    h = max(y1 - y0, 1e-12)
    for t in range(12):
        e = _edges((x0, x1, y0, y1))
        if all(_line_clear(problem, a, b) for a, b in e):
            return (x0, x1, y0, y1)
        d = 1e-3 * (t + 1) * 0.7371
        x0, x1 = x0 - d * w, x1 + d * w * 0.913
        y0, y1 = y0 - d * h * 1.131, y1 + d * h
    return (x0, x1, y0, y1)


def _split(problem, rect):
    x0, x1, y0, y1 = rect
    vertical = (x1 - x0) >= (y1 - y0)
    for f in _SPLIT_FRACTIONS:
        if vertical:
            c = x0 + f * (x1 - x0)
            if _line_clear(problem, complex(c, y0), complex(c, y1)):
                return [(x0, c, y0, y1), (c, x1, y0, y1)]
        else:
            c = y0 + f * (y1 - y0)
            if _line_clear(problem, complex(x0, c), complex(x1, c)):
                return [(x0, x1, y0, c), (x0, x1, c, y1)]
    c = x0 + _SPLIT_FRACTIONS[0] * (x1 - x0) if vertical else y0 + _SPLIT_FRACTIONS[0] * (y1 - y0)
    return [(x0, c, y0, y1), (c, x1, y0, y1)] if vertical else [(x0, x1, y0, c), (x0, x1, c, y1)]


def _zeros_from_moments(s, center, radius):
    """Roots of the polynomial whose power sums are s_1..s_n (Newton identities)."""
    n = int(round(s[0].real))
    e = np.zeros(n + 1, dtype=complex)
    e[0] = 1.0
    for k in range(1, n + 1):
        acc = 0j
        for i in range(1, k + 1):
            acc += (-1) ** (i - 1) * e[k - i] * s[i]
        e[k] = acc / k
    coeffs = [(-1) ** k * e[k] for k in range(n + 1)]
    roots = np.roots(coeffs) if n > 0 else np.array([], dtype=complex)
    return center + radius * roots


def _zero_key(z):
    # descending real part, then ascending |Im|; rounding makes the order schedule-free
    return (-round(z.real, 9), round(abs(z.imag), 9), round(z.imag, 9))


def spectrum_in_rect(problem: SpectralProblem, rect=None, max_per_cell: int = 4,
                     max_depth: int = 40, res_tol: float = 1e-8) -> SpectrumReport:
    rect = tuple(float(v) for v in (rect or problem.box))
    if not (rect[0] < rect[1] and rect[2] < rect[3]):
        raise ValueError(f"degenerate rectangle {rect}")
    rect = _perturb_rect(problem, rect)
    scale = max(1.0, abs(eval_D(problem, 0.0)))
    zeros, resid, certs = [], [], []
    stack = [(rect, 0)]
    while stack:
        r, depth = stack.pop()
        x0, x1, y0, y1 = r
        center = complex((x0 + x1) / 2, (y0 + y1) / 2)
        radius = abs(complex(x1 - x0, y1 - y0)) / 2
        mom, conv, _ = _contour_moments(problem, r, max_per_cell, center, radius)
        raw = mom[0].real
        n = int(round(raw))
        integral = conv and abs(mom[0] - n) < 1e-6
        if n == 0 and integral:
            certs.append(Certificate(r, 0, raw))
            continue
        if (not integral or n > max_per_cell) and depth < max_depth:
            stack.extend((c, depth + 1) for c in _split(problem, r))
            continue
        if not integral:
            certs.append(Certificate(r, n, raw, "quadrature inconsistent"))
            continue
        guesses = _zeros_from_moments(mom[: n + 1], center, radius)
        found = []
        for g in guesses:
            z, res = _newton(problem, complex(g), problem.newton_tol, problem.newton_maxit)
            found.append((z, res))
        inside = [
            (z, res) for z, res in found
            if x0 - 1e-9 <= z.real <= x1 + 1e-9 and y0 - 1e-9 <= z.imag <= y1 + 1e-9
        ]
        distinct = []
        for z, res in inside:
            if all(abs(z - d[0]) > 1e-7 * max(1.0, abs(z)) for d in distinct):
                distinct.append((z, res))
        if len(distinct) != n or any(res > res_tol * scale for _, res in distinct):
            if depth < max_depth:
                stack.extend((c, depth + 1) for c in _split(problem, r))
                continue
            status = "unresolved multiplicity" if len(distinct) < n else "residual above tolerance"
            certs.append(Certificate(r, n, raw, status))
        else:
            certs.append(Certificate(r, n, raw))
        for z, res in distinct:
            zeros.append(z)
            resid.append(res)
    order = sorted(range(len(zeros)), key=lambda i: _zero_key(zeros[i]))
    zs = tuple(zeros[i] for i in order)
    rs = tuple(float(resid[i]) for i in order)
    certs = tuple(sorted(certs, key=lambda c: c.rect))
    return SpectrumReport(None, None, zs, rs, None, certs, rect,
                          caveat=f"no further zeros checked outside Re q >= {rect[0]:g}")


def spectral_gap(problem: SpectralProblem, decay: Optional[DecayResult] = None,
                 rect=None) -> SpectrumReport:
    decay = decay or decay_parameter(problem)
    lam0 = decay.lambda0
    rep = spectrum_in_rect(problem, rect)
    others = [z for z in rep.zeros if abs(z + lam0) > 1e-6 * max(1.0, lam0)]
    if len(others) == len(rep.zeros):
        raise SpectralError(f"-lambda0={-lam0} not among zeros found in {rep.box}")
    if others:
        lam1 = -max(z.real for z in others)
        gap = lam1 - lam0
        caveat = f"gap relative to the search box: no further zeros with Re q >= {rep.box[0]:g}"
        if lam1 <= lam0 + 1e-9 * max(1.0, lam0):
            raise TheoremViolation(f"lambda1={lam1} <= lambda0={lam0}: no spectral gap")
    else:
        lam1, gap = None, None
        caveat = f"no zero besides -lambda0 with Re q >= {rep.box[0]:g}; gap >= {-rep.box[0] - lam0:g}"
    return SpectrumReport(lam0, lam1, rep.zeros, rep.residuals, gap, rep.certificates,
                          rep.box, caveat)


# -- boundary classification ----------------------------------------------------


@dataclass(frozen=True)
class Classification:
    entrance: Optional[bool]
    verdict: str
    b_idx: int
    levels: Tuple[int, ...]
    wbar_tail: Tuple[float, ...]
    hitting_sup: Tuple[float, ...]
    hitting_agrees: bool

    def as_dict(self) -> dict:
        return {
            "entrance": self.entrance,
            "verdict": self.verdict,
            "b_idx": self.b_idx,
            "tail_table": [{"level": int(l), "wbar": float(v)} for l, v in zip(self.levels, self.wbar_tail)],
            "hitting_time_table": [
                {"level": int(l), "sup_expected_time": float(v)} for l, v in zip(self.levels, self.hitting_sup)
            ],
            "hitting_time_check": self.hitting_agrees,
        }


def expected_downcrossing_time(model: Model, x_idx: int, b_idx: int, top: Optional[int] = None):
    """E_x tau_b^- as the window sum of W(b,u) - W(x,u) over (b, top].

    Down-crossing is certain for the shipped models, so the probability factor
    is 1.  Returns ``(value, truncated)``.
    """
    if x_idx < b_idx:
        raise IndexError(f"need b_idx <= x_idx, got ({b_idx}, {x_idx})")
    top = model.M if top is None else top
    if x_idx == b_idx:
        return 0.0, False
    W, w = model.W, model.w
    hi = top + 1 if model.end_closure is Closure.CLOSED_RIGHT else top
    u = slice(b_idx + 1, hi)
    val = float(((W[b_idx, u] - W[x_idx, u]) * w[u]).sum())
    return val, isinstance(model.grid.right_end, Truncation) and top == model.M


def _schedule(M: int, smallest: int = 8) -> List[int]:
    levels = []
    L = M
    while L >= smallest:
        levels.append(L)
        L //= 2
    return sorted(levels)


def classify_boundary(model: Model, b_idx: int = 1, levels: Optional[Sequence[int]] = None,
                      tol: float = 1e-2) -> Classification:
    """Tail sums Wbar(b, L] along a doubling schedule of truncation levels.

    W(b, u) for u <= L does not depend on the truncation above L, so the
    largest model carries every smaller level.
    """
    if not isinstance(model.grid.right_end, Truncation):
        raise ValueError("classification needs a model truncating (0, inf)")
    levels = list(levels) if levels is not None else _schedule(model.M)
    levels = [L for L in levels if b_idx + 2 <= L <= model.M]
    if len(levels) < 3:
        raise ValueError("need at least 3 truncation levels")
    W, w = np.triu(model.W, 1), model.w
    c = np.cumsum(W[b_idx] * w)
    tails = np.array([c[L] for L in levels])
    if np.any(np.diff(tails) < -1e-12 * np.abs(tails[1:])):
        raise SpectralError("non-monotone tail sums")
    # sup over start of E_x tau_b: attained at the top state
    hit = np.array([max(expected_downcrossing_time(model, x, b_idx, L)[0] for x in (L, (L + b_idx) // 2))
                    for L in levels])
    inc = np.diff(tails)
    rel = inc[-1] / tails[-1]
    ratio = inc[-1] / inc[-2] if inc[-2] > 0 else 0.0
    if rel < tol and ratio < 0.9:
        entrance, verdict = True, "entrance"
    elif ratio >= 0.9:
        entrance, verdict = False, "non-entrance"
    else:
        entrance, verdict = None, "inconclusive"
    hinc = np.diff(hit)
    h_bounded = hinc[-1] / hit[-1] < tol and (hinc[-2] <= 0 or hinc[-1] / hinc[-2] < 0.9)
    agrees = entrance is None or (bool(h_bounded) == entrance)
    return Classification(entrance, verdict, b_idx, tuple(levels), tuple(map(float, tails)),
                          tuple(map(float, hit)), bool(agrees))
