"""Piecewise-constant functions on [0, 1] and their exact L2 geometry.

Everything downstream (operators, Gram determinants, samplers) works with
functions of two kinds: explicit step functions with arbitrary breakpoints,
and uniform-grid functions holding midpoint samples.  Both are piecewise
constant, so inner products, prefix integrals and pointwise products are
computed exactly by merging breakpoints — nothing beyond float rounding
enters at this layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .errors import EmptyBasisError, ResolutionError

__all__ = [
    "Interval",
    "StepFunction",
    "GridFunction",
    "PiecewiseConstant",
    "indicator",
    "grid_function",
    "inner_product",
    "norm_sq",
    "as_step",
    "prefix_integral",
    "orthonormalize",
]

#: relative threshold below which a Gram-Schmidt residual is dropped
DROP_TOL = 1e-10


def _readonly(a) -> np.ndarray:
    out = np.asarray(a, dtype=float).copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Interval:
    """Closed subinterval [lo, hi] of [0, 1]; lo == hi is allowed (null set)."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 <= self.lo <= self.hi <= 1.0):
            raise ValueError(f"need 0 <= lo <= hi <= 1, got [{self.lo}, {self.hi}]")

    @property
    def length(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class StepFunction:
    """Right-open piecewise-constant function on [0, 1].

    ``breakpoints`` is strictly increasing and starts at 0 and ends at 1;
    ``values[i]`` is the value on [breakpoints[i], breakpoints[i+1]).
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = _readonly(self.breakpoints)
        vals = _readonly(self.values)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)
        if bp.ndim != 1 or len(bp) < 2:
            raise ValueError("need at least two breakpoints")
        if bp[0] != 0.0 or bp[-1] != 1.0:
            raise ValueError("breakpoints must start at 0 and end at 1")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if len(vals) != len(bp) - 1:
            raise ValueError("need one value per cell")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.breakpoints, t, side="right") - 1,
                      0, len(self.values) - 1)
        return self.values[idx]


@dataclass(frozen=True)
class GridFunction:
    """Function sampled at the midpoints of n equal cells of [0, 1]."""

    n: int
    values: np.ndarray

    def __post_init__(self):
        vals = _readonly(self.values)
        object.__setattr__(self, "values", vals)
        if self.n < 1:
            raise ValueError("need n >= 1")
        if vals.ndim != 1 or len(vals) != self.n:
            raise ValueError(f"need exactly n={self.n} midpoint values")

    @property
    def breakpoints(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n + 1)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip((t * self.n).astype(int), 0, self.n - 1)
        return self.values[idx]


PiecewiseConstant = Union[StepFunction, GridFunction]


def indicator(iv: Interval) -> StepFunction:
    """Indicator of [lo, hi) as a step function (zero function if lo == hi)."""
    if iv.hi == iv.lo:
        return StepFunction(np.array([0.0, 1.0]), np.array([0.0]))
    bp, vals = [0.0], []
    if iv.lo > 0.0:
        bp.append(iv.lo)
        vals.append(0.0)
    vals.append(1.0)
    if iv.hi < 1.0:
        bp.append(iv.hi)
        vals.append(0.0)
    bp.append(1.0)
    return StepFunction(np.array(bp), np.array(vals))


def grid_function(fn: Callable[[np.ndarray], np.ndarray], n: int) -> GridFunction:
    """Sample ``fn`` at the n cell midpoints."""
    mids = (np.arange(n) + 0.5) / n
    return GridFunction(n, np.asarray(fn(mids), dtype=float))


def as_step(f: PiecewiseConstant) -> StepFunction:
    """Exact StepFunction representation (grid functions convert losslessly)."""
    if isinstance(f, StepFunction):
        return f
    return StepFunction(f.breakpoints, f.values)


def _merged_values(f: PiecewiseConstant, g: PiecewiseConstant):
    """Common refinement: (breakpoints, values of f, values of g)."""
    fs, gs = as_step(f), as_step(g)
    bp = np.union1d(fs.breakpoints, gs.breakpoints)
    mids = 0.5 * (bp[:-1] + bp[1:])
    return bp, fs(mids), gs(mids)


def inner_product(f: PiecewiseConstant, g: PiecewiseConstant) -> float:
    """L2[0,1] inner product, exact for piecewise-constant inputs.

    Two grid functions must share a resolution (that sum is the midpoint
    rule); mixed and step inputs go through the merged-breakpoint form.
    """
    if isinstance(f, GridFunction) and isinstance(g, GridFunction):
        if f.n != g.n:
            raise ResolutionError(f"grid resolutions differ: {f.n} != {g.n}")
        return float(np.dot(f.values, g.values) / f.n)
    bp, fv, gv = _merged_values(f, g)
    return float(np.dot(fv * gv, np.diff(bp)))


def norm_sq(f: PiecewiseConstant) -> float:
    return inner_product(f, f)


def prefix_integral(f: PiecewiseConstant):
    """(breakpoints, cumulative values) so that ∫_0^t f = interp(t).

    The prefix integral of a step function is piecewise linear, hence
    ``np.interp(t, breakpoints, cum)`` evaluates it exactly for any t.
    """
    fs = as_step(f)
    cum = np.concatenate([[0.0], np.cumsum(fs.values * np.diff(fs.breakpoints))])
    return fs.breakpoints, cum


def _common_refinement(fs: Sequence[PiecewiseConstant]):
    steps = [as_step(f) for f in fs]
    bp = steps[0].breakpoints
    for s in steps[1:]:
        bp = np.union1d(bp, s.breakpoints)
    mids = 0.5 * (bp[:-1] + bp[1:])
    return bp, np.array([s(mids) for s in steps])


def orthonormalize(fs: Sequence[PiecewiseConstant]) -> list[PiecewiseConstant]:
    """Gram–Schmidt with exact inner products, dropping dependent inputs.

    A residual whose norm falls below DROP_TOL times the input's norm is
    treated as linearly dependent and skipped.  Raises EmptyBasisError when
    nothing survives.  If every input is a GridFunction on one grid the
    output stays on that grid; otherwise step functions on the common
    refinement are returned.
    """
    if not fs:
        raise EmptyBasisError("no input functions")
    all_grid = all(isinstance(f, GridFunction) for f in fs) and \
        len({f.n for f in fs}) == 1
    bp, rows = _common_refinement(fs)
    w = np.diff(bp)
    basis_rows = []
    for i in range(rows.shape[0]):
        v = rows[i].copy()
        orig = np.sqrt(np.dot(v * v, w))
        for b in basis_rows:
            v -= np.dot(v * b, w) * b
        nrm = np.sqrt(np.dot(v * v, w))
        if orig == 0.0 or nrm < DROP_TOL * orig:
            continue
        basis_rows.append(v / nrm)
    if not basis_rows:
        raise EmptyBasisError("all inputs are numerically zero or dependent")
    if all_grid:
        n = fs[0].n
        return [GridFunction(n, b) for b in basis_rows]
    return [StepFunction(bp, b) for b in basis_rows]
