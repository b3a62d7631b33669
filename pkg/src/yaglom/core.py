"""Grids, reference measures, scale kernels and boundary cases.

Everything lives on a fixed grid ``x_0 = 0 < x_1 < ... < x_M``.  Index 0 is
the absorbing boundary and never carries mass.  Integrals over intervals
become weighted sums over index windows; the closure of each window is
explicit (:class:`Closure`).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np


class StructuralError(ValueError):
    """Inputs do not even have compatible shapes."""


class MeasureKind(enum.Enum):
    DIFFUSE = "diffuse"
    ATOMIC = "atomic"


class BoundaryCase(enum.Enum):
    ENTRANCE_INFINITY = "entrance_infinity"
    REFLECTING_RIGHT = "reflecting_right"
    KILLED_BOTH = "killed_both"


class Closure(enum.Enum):
    OPEN = "open"
    CLOSED_RIGHT = "closed_right"


@dataclass(frozen=True)
class Truncation:
    """Right end of a grid standing in for (0, inf)."""

    level: float


@dataclass(frozen=True)
class Boundary:
    """Accessible right end point ``ell = x_M``."""

    ell: float


RightEnd = Union[Truncation, Boundary]


def _frozen(a: Any, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StateGrid:
    points: np.ndarray
    right_end: RightEnd

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(self.points))

    @property
    def M(self) -> int:
        return len(self.points) - 1

    def spacing(self) -> float:
        return float(np.max(np.diff(self.points)))


@dataclass(frozen=True)
class ReferenceMeasure:
    """Masses ``w_0..w_M``; ``w_0`` is always zero."""

    weights: np.ndarray
    kind: MeasureKind

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights))

    @property
    def M(self) -> int:
        return len(self.weights) - 1


@dataclass(frozen=True)
class ScaleKernel:
    """Triangular table ``w0[i, j] = W(x_i, x_j)``, zero below the diagonal."""

    w0: np.ndarray
    diag_zero: bool = True

    def __post_init__(self):
        object.__setattr__(self, "w0", _frozen(self.w0))

    @property
    def M(self) -> int:
        return self.w0.shape[0] - 1


@dataclass(frozen=True)
class ComplexRate:
    re: float
    im: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.re) and np.isfinite(self.im)):
            raise ValueError(f"non-finite rate ({self.re}, {self.im})")

    def __complex__(self) -> complex:
        return complex(self.re, self.im)


def as_complex(q) -> complex:
    return complex(q)


@dataclass(frozen=True)
class Model:
    """A validated-or-not bundle of grid, measure, 0-kernel and boundary case.

    ``extras`` carries family-specific data (chain rates, diffusion
    coefficients, closed-form oracle) that oracles and the simulator need.
    """

    grid: StateGrid
    measure: ReferenceMeasure
    kernel: ScaleKernel
    case: BoundaryCase
    name: str = "model"
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def M(self) -> int:
        return self.grid.M

    @property
    def x(self) -> np.ndarray:
        return self.grid.points

    @property
    def w(self) -> np.ndarray:
        return self.measure.weights

    @property
    def W(self) -> np.ndarray:
        return self.kernel.w0

    @property
    def end_closure(self) -> Closure:
        """Closure of windows reaching the right end of the state space."""
        if self.case is BoundaryCase.KILLED_BOTH:
            return Closure.OPEN
        return Closure.CLOSED_RIGHT

    def state_indices(self) -> np.ndarray:
        """Grid indices that belong to the state space I."""
        top = self.M if self.end_closure is Closure.CLOSED_RIGHT else self.M - 1
        return np.arange(1, top + 1)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    locations: tuple = ()


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> set:
        return {v.code for v in self.violations}

    def __bool__(self) -> bool:  # truthy when valid
        return self.ok


def _locs(mask: np.ndarray, limit: int = 20) -> tuple:
    idx = np.argwhere(mask)
    return tuple(tuple(int(v) for v in row) for row in idx[:limit])


def validate_model(
    grid: StateGrid,
    m: ReferenceMeasure,
    k: ScaleKernel,
    bc: BoundaryCase,
    atol: float = 0.0,
) -> ValidationReport:
    M = grid.M
    if m.M != M or k.w0.shape != (M + 1, M + 1):
        raise StructuralError(
            f"dimension mismatch: grid M={M}, measure M={m.M}, kernel {k.w0.shape}"
        )
    out = []
    x = grid.points
    if M < 2:
        out.append(Violation("grid-size", f"need M >= 2, got {M}"))
    if x[0] != 0.0:
        out.append(Violation("grid-origin", f"x_0 must be 0, got {x[0]}"))
    bad = np.diff(x) <= 0
    if bad.any():
        out.append(Violation("grid-order", "points not strictly increasing", _locs(bad)))

    wts = m.weights
    if wts[0] != 0.0:
        out.append(Violation("measure-origin", "index 0 must carry no mass", ((0,),)))
    neg = wts < 0
    if neg.any():
        out.append(Violation("measure-sign", "negative weights", _locs(neg)))
    # any open window (i, i+2) holds the single point i+1
    empty = wts[1:M] <= 0
    if empty.any():
        out.append(
            Violation(
                "measure-support",
                "open window with zero mass",
                tuple((int(i), int(i) + 2) for i in np.flatnonzero(empty)[:20]),
            )
        )

    W = k.w0
    if not np.all(np.isfinite(W)):
        out.append(Violation("kernel-finite", "non-finite kernel entries", _locs(~np.isfinite(W))))
    iu = np.triu(np.ones_like(W, dtype=bool), 1)
    nonpos = iu & ~(W > 0)
    if nonpos.any():
        out.append(Violation("kernel-positive", "W(x_i, x_j) <= 0 for i < j", _locs(nonpos)))
    il = np.tril(np.ones_like(W, dtype=bool), -1)
    below = il & (np.abs(W) > atol)
    if below.any():
        out.append(Violation("kernel-triangular", "nonzero entry below diagonal", _locs(below)))
    if m.kind is MeasureKind.DIFFUSE:
        dm = np.abs(np.diag(W)[1:] * wts[1:]) > atol
        if dm.any():
            out.append(
                Violation(
                    "kernel-diagonal-mass",
                    "W(x,x) m{x} != 0",
                    tuple((int(i) + 1, int(i) + 1) for i in np.flatnonzero(dm)[:20]),
                )
            )

    want_trunc = bc is BoundaryCase.ENTRANCE_INFINITY
    if want_trunc != isinstance(grid.right_end, Truncation):
        out.append(
            Violation(
                "boundary-case/right-end mismatch",
                f"{bc.value} incompatible with {type(grid.right_end).__name__} right end",
            )
        )
    elif isinstance(grid.right_end, Boundary) and not np.isclose(grid.right_end.ell, x[-1]):
        out.append(Violation("boundary-location", "ell must equal x_M"))
    return ValidationReport(tuple(out))


def validate(model: Model) -> ValidationReport:
    return validate_model(model.grid, model.measure, model.kernel, model.case)


def window_sum(m: ReferenceMeasure, f, i: int, j: int, closure: Closure = Closure.OPEN) -> float:
    """Sum of ``f(x_k) w_k`` over k in (i, j) or (i, j]."""
    M = m.M
    if not (0 <= i <= M and 0 <= j <= M):
        raise IndexError(f"window ({i}, {j}) outside 0..{M}")
    if j < i:
        raise IndexError(f"window ({i}, {j}) reversed")
    f = np.asarray(f)
    hi = j + 1 if closure is Closure.CLOSED_RIGHT else j
    if hi <= i + 1:
        return 0.0 * f[0] if f.size else 0.0
    return (f[i + 1:hi] * m.weights[i + 1:hi]).sum()
