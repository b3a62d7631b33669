"""Function-level checks of the semigroup against the analytic bundle."""
from __future__ import annotations

import enum
from typing import Optional, Sequence

import numpy as np

from ..qsd import QsdBundle, qprocess_quantities
from .oracles import SubGenerator, transition_oracle


class Mode(enum.Enum):
    INVARIANCE = "invariance"
    MEAN_YAGLOM = "mean_yaglom"
    QPROCESS = "qprocess"


_GX, _GW = np.polynomial.legendre.leggauss(16)


def _tilted(sub: SubGenerator, lam0: float) -> SubGenerator:
    # exp(lam0 s) p_s as one semigroup; avoids overflow times underflow at large s
    return SubGenerator(sub.Q + lam0 * np.eye(sub.n), sub.kind, sub.states)


def time_average(sub: SubGenerator, lam0: float, f: np.ndarray, t: float, panel: float = 1.0):
    """(1/t) int_0^t exp(lam0 s) p_s f ds by composite Gauss-Legendre."""
    sub = _tilted(sub, lam0)
    n = max(1, int(np.ceil(t / panel)))
    edges = np.linspace(0.0, t, n + 1)
    acc = np.zeros_like(f, dtype=float)
    for a, b in zip(edges[:-1], edges[1:]):
        for xg, wg in zip(_GX, _GW):
            s = (a + b) / 2 + (b - a) / 2 * xg
            acc += wg * (b - a) / 2 * transition_oracle(sub, s, f)
    return acc / t


def semigroup_checks(bundle: QsdBundle, sub: SubGenerator, mode, f: Optional[np.ndarray] = None,
                     times: Optional[Sequence[float]] = None, t: float = 50.0) -> dict:
    """Residual diagnostics; ``f`` and the outputs live on the sub-generator's states."""
    mode = Mode(mode)
    st = sub.states
    z = bundle.zinv[st]
    lam0 = bundle.lambda0
    if mode is Mode.INVARIANCE:
        times = tuple(times or (0.5, 1.0, 2.0))
        res = {s: float(np.max(np.abs(np.exp(lam0 * s) * transition_oracle(sub, s, z) - z)))
               for s in times}
        return {"mode": mode.value, "residuals": res, "max": max(res.values())}
    if mode is Mode.MEAN_YAGLOM:
        if f is None:
            f = np.zeros(st.size)
            f[-1] = 1.0
        lhs = time_average(sub, lam0, f, t)
        fg = np.zeros(bundle.x.size)
        fg[st] = f
        rhs = z / bundle.rho * float(np.sum(bundle.w_row * fg * bundle.weights))
        rel = np.abs(lhs - rhs) / np.abs(rhs)
        return {"mode": mode.value, "t": t, "lhs": lhs, "rhs": rhs, "rel_error": rel,
                "max": float(rel.max()), "scaled": float(rel.max() * t)}
    # Q-process: q_t f = exp(lam0 t) p_t(z f) / z against mu(f)
    mu = qprocess_quantities(bundle)["mu"][st]
    if f is None:
        f = np.zeros(st.size)
        f[0] = 1.0 / z[0]
    muf = float(mu @ f)
    times = np.asarray(times if times is not None else np.linspace(0.5, 6.0, 12))
    dev = []
    for s in times:
        qf = np.exp(lam0 * s) * transition_oracle(sub, s, z * f) / z
        dev.append(float(np.max(z * np.abs(qf - muf))))
    dev = np.array(dev)
    ok = dev > 1e-13
    slope = float(-np.polyfit(times[ok], np.log(dev[ok]), 1)[0]) if ok.sum() >= 2 else None
    return {"mode": mode.value, "times": times, "deviation": dev, "fitted_rate": slope}
