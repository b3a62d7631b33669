"""Quasi-stationary distribution, invariant function, resolvent density, Q-process."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import BoundaryCase, Closure, MeasureKind
from .scale import NearZeroError, density_table, wq_eval
from .spectral import DKind, SpectralError, SpectralProblem, D_and_prime, D_batch, decay_parameter


class QsdError(SpectralError):
    pass


@dataclass(frozen=True)
class QsdBundle:
    lambda0: float
    nu: np.ndarray  # mass per grid atom, zero off the state space
    zinv: np.ndarray
    rho: float
    norm_const: float
    presum: float  # sum before normalisation; a discretisation diagnostic
    w_row: np.ndarray  # W^(-lambda0)(0, x_i)
    x: np.ndarray
    weights: np.ndarray
    case: BoundaryCase
    diffuse: bool
    speed: Optional[np.ndarray] = None

    @property
    def proj_const(self) -> float:
        """Constant c with pi f = c * zinv * nu(f)."""
        if self.case is BoundaryCase.KILLED_BOTH:
            return 1.0 / (self.rho * self.norm_const)
        return 1.0 / (self.rho * self.lambda0)

    @property
    def states(self) -> np.ndarray:
        return np.flatnonzero(self._mask)

    @property
    def _mask(self) -> np.ndarray:
        m = np.zeros(self.x.size, dtype=bool)
        top = self.x.size - 1 if self.case is not BoundaryCase.KILLED_BOTH else self.x.size - 2
        m[1:top + 1] = True
        return m

    def density(self) -> np.ndarray:
        """nu per unit length (diffuse models); equals nu for atomic ones."""
        if not self.diffuse:
            return self.nu.copy()
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(self.weights > 0, self.nu / self.weights, 0.0)
        # nu_i / cell_i with cell_i = w_i / speed_i
        return d * self.speed if self.speed is not None else d


def _row_and_col(problem: SpectralProblem, lam: float):
    ev = problem._ev
    q = np.array([-lam])
    row = ev.row0(q)[0].real
    col = (ev.wcol(q) if problem.kind is DKind.W_INTERVAL else ev.zcol(q))[0].real
    return row, col


def _budget(problem: SpectralProblem) -> float:
    h = problem.model.grid.spacing()
    if problem.model.measure.kind is MeasureKind.ATOMIC:
        return 1e-8
    return 10 * h**2


def rho_value(problem: SpectralProblem, lambda0: float) -> float:
    _, Dp = D_and_prime(problem, np.array([-lambda0]))
    rho = float(Dp[0].real)
    if not rho > 0:
        raise QsdError(f"rho = {rho} <= 0")
    return rho


def invariant_function(problem: SpectralProblem, lambda0: float) -> np.ndarray:
    _, col = _row_and_col(problem, lambda0)
    if problem.kind is DKind.Z_INFINITY:
        z = col[1:]
        if np.any(np.diff(z) <= 0):
            raise QsdError("Z^(-lambda0) not strictly increasing on the entrance model")
    return col


def qsd_density(problem: SpectralProblem, lambda0: Optional[float] = None,
                neg_tol: float = 1e-10, strict: bool = True) -> QsdBundle:
    model = problem.model
    if lambda0 is None:
        lambda0 = decay_parameter(problem).lambda0
    row, col = _row_and_col(problem, lambda0)
    mask = np.zeros(model.M + 1, dtype=bool)
    mask[model.state_indices()] = True
    base = np.where(mask, row * model.w, 0.0)
    if problem.kind is DKind.W_INTERVAL:
        presum = float(base.sum())
        C = 1.0 / presum
        nu = C * base
    else:
        C = 1.0
        pre = lambda0 * base
        presum = float(pre.sum())
        if strict and abs(presum - 1) > _budget(problem):
            raise QsdError(f"pre-normalisation sum {presum} outside 1 +- {_budget(problem):.3g}")
        nu = pre / presum
    if nu.min() < -neg_tol:
        raise QsdError(f"negative QSD weight {nu.min():.3g}: wrong lambda0 or bad kernel")
    nu = np.where(mask, np.maximum(nu, 0.0), 0.0)
    zinv = invariant_function(problem, lambda0)
    rho = rho_value(problem, lambda0)
    speed = model.extras.get("speed_density")
    return QsdBundle(
        float(lambda0), nu, zinv, rho, float(C), presum, row,
        np.asarray(model.x), np.asarray(model.w), model.case,
        model.measure.kind is MeasureKind.DIFFUSE,
        None if speed is None else np.asarray(speed),
    )


def yaglom_projection(bundle: QsdBundle, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    return bundle.proj_const * bundle.zinv * float(np.dot(f, bundle.nu))


def qprocess_quantities(bundle: QsdBundle, tol: Optional[float] = None) -> dict:
    mask = bundle._mask
    mu = np.where(mask, bundle.w_row * bundle.zinv * bundle.weights / bundle.rho, 0.0)
    total = float(mu.sum())
    tol = tol if tol is not None else (1e-8 if not bundle.diffuse else 1e-6)
    if abs(total - 1) > tol:
        raise QsdError(f"sum of mu = {total}, outside 1 +- {tol}")
    return {
        "mu": mu,
        "mu_sum": total,
        "h_transform": {
            "kind": "doob_h",
            "lambda0": bundle.lambda0,
            "h": bundle.zinv,
            "rule": "q_t f = exp(lambda0 t) p_t(h f) / h",
        },
    }


def resolvent_density(problem: SpectralProblem, q, i: int, j: int) -> complex:
    q = complex(q)
    D, Dp = (v[0] for v in D_and_prime(problem, np.array([q])))
    scale = max(1.0, abs(complex(D_batch(problem, np.array([0.0]))[0])))
    if abs(D) < 1e-8 * scale:
        hint = abs(D / Dp) if Dp != 0 else float("inf")
        raise NearZeroError(f"q={q} is within ~{hint:.3g} of a zero of D")
    table = density_table(problem.model, q)
    return complex(table[i, j])


def resolvent_at_infinity(problem: SpectralProblem, q, f) -> complex:
    if problem.kind is not DKind.Z_INFINITY:
        raise ValueError("resolvent at infinity needs an entrance-at-infinity model")
    q = complex(q)
    f = np.asarray(f)
    row = problem._ev.row0(np.array([q]))[0]
    D = complex(D_batch(problem, np.array([q]))[0])
    if abs(D) < 1e-12:
        raise NearZeroError(f"D(q) ~ 0 at q={q}")
    w = problem.model.w
    return complex((row[1:] * f[1:] * w[1:]).sum() / D)
