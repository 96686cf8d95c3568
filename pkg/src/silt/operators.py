"""Bounded operators that turn white noise into a Gaussian integrator.

A path model is x(t) = (A 1_[0,t], xi) for a bounded operator A on L2[0,1]
and white noise xi.  Three variants are supported:

* ``Identity`` — the Wiener process itself;
* ``Multiplication(phi)`` — (Af)(r) = phi(r) f(r) with 0 < m <= |phi| <= M,
  an invertible integrator with independent increments;
* ``ProjectionComplement(basis)`` — Af = f - sum <f, e_j> e_j, which pins
  the path at the knots of the generating partition (piecewise bridges).

All three are self-adjoint; ``apply_adjoint`` exists because callers built
against the operator contract should not need to know that.

Besides the single-function ``apply``, the module provides vectorized
kernels over batches of interval families — ``increment_gram_batch`` and
``pair_masses_batch`` — which the Monte Carlo integrands are built from.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .functions import (
    GridFunction,
    Interval,
    PiecewiseConstant,
    StepFunction,
    as_step,
    indicator,
    inner_product,
    norm_sq,
    orthonormalize,
    prefix_integral,
)
from .gram import GramMatrix

__all__ = [
    "Operator",
    "Identity",
    "Multiplication",
    "ProjectionComplement",
    "increment_gram",
    "increment_gram_batch",
    "pair_masses_batch",
    "parse_operator",
]

ORTHO_TOL = 1e-10


def _pointwise_product(f: PiecewiseConstant, g: PiecewiseConstant) -> StepFunction:
    fs, gs = as_step(f), as_step(g)
    bp = np.union1d(fs.breakpoints, gs.breakpoints)
    mids = 0.5 * (bp[:-1] + bp[1:])
    return StepFunction(bp, fs(mids) * gs(mids))


def _linear_combination(base: PiecewiseConstant, terms) -> StepFunction:
    """base - sum_j c_j e_j as one step function."""
    parts = [as_step(base)] + [as_step(e) for _, e in terms]
    bp = parts[0].breakpoints
    for p in parts[1:]:
        bp = np.union1d(bp, p.breakpoints)
    mids = 0.5 * (bp[:-1] + bp[1:])
    vals = parts[0](mids).astype(float)
    for (c, _), p in zip(terms, parts[1:]):
        vals -= c * p(mids)
    return StepFunction(bp, vals)


class Operator:
    """Common interface: apply / apply_adjoint on piecewise-constant functions."""

    def apply(self, f: PiecewiseConstant) -> PiecewiseConstant:
        raise NotImplementedError

    def apply_adjoint(self, h: PiecewiseConstant) -> PiecewiseConstant:
        # every supported variant is self-adjoint
        return self.apply(h)


@dataclass(frozen=True)
class Identity(Operator):
    def apply(self, f: PiecewiseConstant) -> PiecewiseConstant:
        return f

    def label(self) -> str:
        return "identity"


@dataclass(frozen=True)
class Multiplication(Operator):
    """Multiplication by a measurable phi bounded away from 0 and infinity."""

    phi: PiecewiseConstant

    def __post_init__(self):
        lo = float(np.min(np.abs(self.phi.values)))
        if lo <= 0.0:
            raise ValueError("multiplier must satisfy 0 < m <= |phi|")

    @property
    def lower(self) -> float:
        """m with m <= |phi| everywhere."""
        return float(np.min(np.abs(self.phi.values)))

    @property
    def upper(self) -> float:
        """M with |phi| <= M everywhere."""
        return float(np.max(np.abs(self.phi.values)))

    def apply(self, f: PiecewiseConstant) -> PiecewiseConstant:
        return _pointwise_product(self.phi, f)

    def label(self) -> str:
        return "mult"


@dataclass(frozen=True)
class ProjectionComplement(Operator):
    """I - P for the orthogonal projection P onto span(basis).

    The basis must be orthonormal (checked to ORTHO_TOL at construction).
    Use :func:`from_partition` for the normalized-indicator case that
    produces piecewise Brownian bridges.
    """

    basis: tuple

    def __post_init__(self):
        basis = tuple(self.basis)
        object.__setattr__(self, "basis", basis)
        for i, e in enumerate(basis):
            for j in range(i + 1):
                want = 1.0 if i == j else 0.0
                got = inner_product(basis[i], basis[j])
                if abs(got - want) > ORTHO_TOL:
                    raise ValueError(
                        f"basis not orthonormal: <e{i}, e{j}> = {got!r}")

    @staticmethod
    def from_partition(knots: Sequence[float]) -> "ProjectionComplement":
        """Complement of the span of normalized indicators of the partition
        of [0,1] cut at the given interior knots (empty = single bridge)."""
        pts = [0.0, *sorted(float(s) for s in knots), 1.0]
        if len(set(pts)) != len(pts):
            raise ValueError("knots must be distinct interior points")
        if any(not 0.0 < s < 1.0 for s in pts[1:-1]):
            raise ValueError("knots must lie strictly inside (0, 1)")
        cells = [indicator(Interval(a, b)) for a, b in zip(pts[:-1], pts[1:])]
        return ProjectionComplement(tuple(orthonormalize(cells)))

    def apply(self, f: PiecewiseConstant) -> PiecewiseConstant:
        coeffs = [(inner_product(f, e), e) for e in self.basis]
        return _linear_combination(f, coeffs)

    def label(self) -> str:
        return "projcomp"


# ---------------------------------------------------------------------------
# batched interval kernels

def _interval_masses(A: Operator, los: np.ndarray, his: np.ndarray) -> np.ndarray:
    """∫ over [lo, hi) of the operator's squared weight (Identity: length)."""
    if isinstance(A, Multiplication):
        phi2 = _pointwise_product(A.phi, A.phi)
        bp, cum = prefix_integral(phi2)
        return np.interp(his, bp, cum) - np.interp(los, bp, cum)
    return his - los


def pair_masses_batch(A: Operator, h: PiecewiseConstant,
                      los: np.ndarray, his: np.ndarray) -> np.ndarray:
    """<A 1_[lo,hi), h> for arrays of intervals, via the adjoint prefix.

    <A 1_I, h> = <1_I, A* h> = ∫_I (A* h), one interpolation per endpoint.
    """
    bp, cum = prefix_integral(as_step(A.apply_adjoint(h)))
    return np.interp(his, bp, cum) - np.interp(los, bp, cum)


def increment_gram_batch(A: Operator, los: np.ndarray,
                         his: np.ndarray) -> np.ndarray:
    """Gram matrices <A 1_I_i, A 1_I_j> for a batch of interval families.

    ``los``/``his`` have shape (m, d); the result has shape (m, d, d).
    Intervals inside one family may overlap (the mixed-moment use), so the
    full cross terms are assembled, not just the diagonal.
    """
    los = np.atleast_2d(np.asarray(los, dtype=float))
    his = np.atleast_2d(np.asarray(his, dtype=float))
    m, d = los.shape
    cap_lo = np.maximum(los[:, :, None], los[:, None, :])
    cap_hi = np.minimum(his[:, :, None], his[:, None, :])

    if isinstance(A, (Identity, Multiplication)):
        if isinstance(A, Identity):
            out = np.clip(cap_hi - cap_lo, 0.0, None)
        else:
            phi2 = _pointwise_product(A.phi, A.phi)
            bp, cum = prefix_integral(phi2)
            lo_v = np.interp(cap_lo, bp, cum)
            hi_v = np.interp(np.maximum(cap_hi, cap_lo), bp, cum)
            out = hi_v - lo_v
        return out

    if isinstance(A, ProjectionComplement):
        plain = np.clip(cap_hi - cap_lo, 0.0, None)
        # <(I-P)1_I, (I-P)1_J> = <1_I, 1_J> - sum_l <1_I, e_l><1_J, e_l>
        u = np.empty((m, d, len(A.basis)))
        for l, e in enumerate(A.basis):
            bp, cum = prefix_integral(e)
            u[:, :, l] = np.interp(his, bp, cum) - np.interp(los, bp, cum)
        return plain - u @ u.transpose(0, 2, 1)

    raise TypeError(f"unsupported operator {type(A).__name__}")


def increment_gram(A: Operator, intervals: Sequence[Interval]) -> GramMatrix:
    """Gram matrix of {A 1_I : I in intervals}."""
    los = np.array([[iv.lo for iv in intervals]])
    his = np.array([[iv.hi for iv in intervals]])
    return GramMatrix(increment_gram_batch(A, los, his)[0])


# ---------------------------------------------------------------------------
# canonical text form

def _load_grid_file(path: str) -> GridFunction:
    raw = Path(path).read_text()
    vals = [float(tok) for tok in raw.replace(",", " ").split()]
    if not vals:
        raise ConfigError(f"grid file {path!r} holds no values")
    return GridFunction(len(vals), np.array(vals))


def parse_operator(text: str) -> Operator:
    """Parse the canonical operator strings.

    ``identity`` | ``mult:const:<c>`` | ``mult:<grid-file>`` |
    ``projcomp:<comma-separated knots>`` | ``bridge`` (= ``projcomp:``).
    """
    text = text.strip()
    if text == "identity":
        return Identity()
    if text == "bridge":
        return ProjectionComplement.from_partition([])
    if text.startswith("mult:"):
        body = text[len("mult:"):]
        try:
            if body.startswith("const:"):
                c = float(body[len("const:"):])
                phi = StepFunction(np.array([0.0, 1.0]), np.array([c]))
            else:
                phi = _load_grid_file(body)
            return Multiplication(phi)
        except (ValueError, OSError) as exc:
            raise ConfigError(f"bad multiplication operator {text!r}: {exc}")
    if text.startswith("projcomp:"):
        body = text[len("projcomp:"):].strip()
        try:
            knots = [float(tok) for tok in body.split(",") if tok.strip()]
            return ProjectionComplement.from_partition(knots)
        except ValueError as exc:
            raise ConfigError(f"bad projection operator {text!r}: {exc}")
    raise ConfigError(f"unknown operator {text!r}")
