"""Monte Carlo ensembles for conditioned laws.

Paths are simulated in fixed blocks; block k draws from
``SeedSequence(seed, spawn_key=(k,))``.  The ensemble therefore depends only
on the seed, never on how blocks are spread across workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from ..core import BoundaryCase, Model
from ..models import ChainSpec

BLOCK = 4096


@dataclass(frozen=True)
class SimEnsemble:
    seed: int
    paths: int
    horizon: float
    step: Optional[float]
    times: np.ndarray
    survival: np.ndarray  # surviving paths per bucket
    hist: np.ndarray  # (bucket, grid index) counts
    generator: str
    x0: Union[int, str]
    warnings: tuple = ()

    def __post_init__(self):
        if np.any(self.survival > self.paths) or np.any(self.hist.sum(axis=1) != self.survival):
            raise ValueError("inconsistent ensemble counts")

    def survival_fraction(self) -> np.ndarray:
        return self.survival / self.paths


def _block_sizes(paths: int, block: int):
    n = math.ceil(paths / block)
    return [min(block, paths - k * block) for k in range(n)]


def _rng(seed: int, k: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(k,))))


def _jump_tables(spec: ChainSpec):
    r = spec.rates
    N = spec.N
    deg = max(1, int((r > 0).sum(axis=1).max()))
    dest = np.zeros((N + 1, deg), dtype=np.int64)
    cum = np.ones((N + 1, deg))
    for s in range(1, N + 1):
        js = np.flatnonzero(r[s] > 0)
        if js.size == 0:
            continue
        p = np.cumsum(r[s, js]) / r[s, js].sum()
        dest[s, : js.size] = js
        dest[s, js.size:] = js[-1]
        cum[s, : js.size] = p
        cum[s, js.size:] = 1.0
    return dest, cum, r.sum(axis=1)


def _chain_block(spec, tables, x0, n, times, rng, init_p):
    dest, cum, out = tables
    N = spec.N
    killed_top = spec.case is BoundaryCase.KILLED_BOTH
    nb = times.size
    diff = np.zeros((nb + 1, N + 1), dtype=np.int64)
    if init_p is None:
        s = np.full(n, x0, dtype=np.int64)
    else:
        s = rng.choice(init_p.size, size=n, p=init_p).astype(np.int64)
    t = np.zeros(n)
    horizon = times[-1]
    while s.size:
        tau = rng.exponential(1.0, size=s.size) / out[s]
        t_new = t + tau
        lo = np.searchsorted(times, t, side="left")
        hi = np.searchsorted(times, t_new, side="left")
        np.add.at(diff, (lo, s), 1)
        np.add.at(diff, (hi, s), -1)
        u = rng.random(s.size)
        k = (cum[s] < u[:, None]).sum(axis=1)
        s = dest[s, np.minimum(k, dest.shape[1] - 1)]
        t = t_new
        alive = (s != 0) & (t <= horizon)
        if killed_top:
            alive &= s != N
        s, t = s[alive], t[alive]
    return np.cumsum(diff, axis=0)[:nb]


def _grid_bins(x: np.ndarray, pos: np.ndarray) -> np.ndarray:
    mids = (x[1:] + x[:-1]) / 2
    return np.searchsorted(mids, pos, side="left")


def _diffusion_block(model, x0, n, times, rng, step, init_p):
    x = np.asarray(model.x)
    b_s = np.asarray(model.extras["drift"])
    s_s = np.asarray(model.extras["sigma"])
    ell = x[-1]
    killed_top = model.case is BoundaryCase.KILLED_BOTH
    nb = times.size
    hist = np.zeros((nb, x.size), dtype=np.int64)
    if init_p is None:
        pos = np.full(n, x[x0])
    else:
        pos = x[rng.choice(init_p.size, size=n, p=init_p)]
    alive = np.ones(n, dtype=bool)
    nsteps = int(round(times[-1] / step))
    bucket_step = np.rint(times / step).astype(np.int64)
    bi = 0
    while bi < nb and bucket_step[bi] == 0:
        np.add.at(hist[bi], _grid_bins(x, pos[alive]), 1)
        bi += 1
    sq = math.sqrt(step)
    for k in range(1, nsteps + 1):
        p = pos[alive]
        drift = np.interp(p, x, b_s)
        sig = np.interp(p, x, s_s)
        p = p + drift * step + sig * sq * rng.standard_normal(p.size)
        dead = p <= 0
        if killed_top:
            dead |= p >= ell
        else:
            p = np.where(p > ell, 2 * ell - p, p)
        pos[alive] = p
        idx = np.flatnonzero(alive)
        alive[idx[dead]] = False
        while bi < nb and bucket_step[bi] == k:
            np.add.at(hist[bi], _grid_bins(x, pos[alive]), 1)
            bi += 1
        if not alive.any():
            break
    return hist


def simulate(model: Union[Model, ChainSpec], x0: int, horizon: float, paths: int, seed: int,
             step: Optional[float] = None, dt_bucket: float = 0.05, workers: int = 1,
             init: Optional[np.ndarray] = None, block: int = BLOCK) -> SimEnsemble:
    """Survival counts and state histograms at bucket times 0, dt, ..., horizon.

    ``x0`` is a grid index; ``init`` (weights over grid indices) overrides it.
    """
    if paths < 1:
        raise ValueError("paths must be >= 1")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    nb = int(round(horizon / dt_bucket)) + 1
    times = np.round(np.arange(nb) * dt_bucket, 12)
    init_p = None if init is None else np.asarray(init, float) / np.sum(init)
    warns = []
    if isinstance(model, ChainSpec) or model.extras.get("family") == "chain":
        spec = model if isinstance(model, ChainSpec) else model.extras["spec"]
        tables = _jump_tables(spec)
        size = spec.N + 1
        gen = f"gillespie-vectorised/pcg64/seedseq-block{block}"

        def run(k, n):
            return _chain_block(spec, tables, x0, n, times, _rng(seed, k), init_p)
    else:
        ell = float(model.x[-1])
        smax = float(np.max(model.extras["sigma"]))
        if step is None:
            step = 1e-4 * ell**2 / smax**2
        if smax * math.sqrt(step) > 0.05 * ell:
            warns.append(f"step {step:g} large relative to sigma^2 scale")
        if abs(dt_bucket / step - round(dt_bucket / step)) > 1e-6:
            warns.append("bucket times rounded to the Euler step")
        size = model.M + 1
        gen = f"euler-maruyama/pcg64/seedseq-block{block}/dt={step:.17g}"

        def run(k, n):
            return _diffusion_block(model, x0, n, times, _rng(seed, k), step, init_p)

    sizes = _block_sizes(paths, block)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: run(*a), enumerate(sizes)))
    else:
        parts = [run(k, n) for k, n in enumerate(sizes)]
    hist = np.zeros((nb, size), dtype=np.int64)
    for p in parts:
        hist += p
    x0_tag = "init" if init is not None else int(x0)
    return SimEnsemble(int(seed), int(paths), float(horizon), step, times, hist.sum(axis=1),
                       hist, gen, x0_tag, tuple(warns))


@dataclass(frozen=True)
class YaglomReport:
    times: np.ndarray
    survivors: np.ndarray
    tv: np.ndarray
    floor: np.ndarray
    se: np.ndarray
    kept: np.ndarray  # bool per bucket
    fitted_rate: Optional[float]
    rate_ci: Optional[tuple]
    fit_range: Optional[tuple]
    dropped: tuple

    def at(self, t: float) -> dict:
        i = int(np.argmin(np.abs(self.times - t)))
        return {"t": float(self.times[i]), "n": int(self.survivors[i]), "tv": float(self.tv[i]),
                "floor": float(self.floor[i]), "se": float(self.se[i]), "kept": bool(self.kept[i])}


def yaglom_report(ens: SimEnsemble, nu: np.ndarray, min_survivors: int = 30) -> YaglomReport:
    """TV distance of the conditioned empirical law to ``nu`` per bucket and a
    least-squares fit of the log-TV slope."""
    nu = np.asarray(nu, dtype=float)
    if ens.paths == 0 or ens.survival.sum() == 0:
        raise ValueError("empty ensemble")
    if nu.size != ens.hist.shape[1]:
        raise ValueError("QSD weights and ensemble bins disagree")
    n = ens.survival.astype(float)
    kept = n >= min_survivors
    with np.errstate(divide="ignore", invalid="ignore"):
        p = ens.hist / n[:, None]
        tv = 0.5 * np.abs(p - nu[None, :]).sum(axis=1)
        var = nu * (1 - nu)
        floor = 0.5 * np.sqrt(2 * var[None, :] / (math.pi * n[:, None])).sum(axis=1)
        se = 0.5 * np.sqrt(var[None, :] / n[:, None]).sum(axis=1)
    tv = np.where(kept, tv, np.nan)
    dropped = tuple(float(t) for t in ens.times[~kept])
    idx = np.flatnonzero(kept)
    rate = ci = rng = None
    start = next((i for i in idx if tv[i] < 0.5), None)
    end = None
    if start is not None:
        # end of the first unbroken run above 3x the floor; later isolated
        # excursions are noise
        for i in idx[idx >= start]:
            if not tv[i] > 3 * floor[i]:
                break
            end = i
    if end is not None and end > start:
        sel = np.array([i for i in idx if start <= i <= end and tv[i] > 0])
        if sel.size >= 3:
            t = ens.times[sel]
            y = np.log(tv[sel])
            A = np.vstack([t, np.ones_like(t)]).T
            coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
            dof = max(sel.size - 2, 1)
            s2 = float(np.sum((y - A @ coef) ** 2)) / dof
            sd = math.sqrt(s2 / np.sum((t - t.mean()) ** 2))
            rate = float(-coef[0])
            ci = (rate - 1.96 * sd, rate + 1.96 * sd)
            rng = (float(t[0]), float(t[-1]))
    return YaglomReport(ens.times, ens.survival, tv, floor, se, kept, rate, ci, rng, dropped)
