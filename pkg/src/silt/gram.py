"""Gram matrices, projections, and the determinant identities.

The three workhorse facts about Gram determinants of L2 families used
throughout the package:

* projecting out an orthonormal family multiplies nothing: the determinant
  of the projected family equals the determinant of the family enlarged by
  that orthonormal set (the slicing identity checked by
  :func:`cavalieri_both_sides`);
* the Gram determinant of indicator functions dominates the product of the
  fresh-measure terms |D_k \\ (D_1 ∪ … ∪ D_{k-1})|;
* an operator with bounded inverse changes a Gram determinant by at most
  ||A^{-1}||^{-2n} from below (exercised in the operator tests).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DegeneracyError
from .functions import Interval, PiecewiseConstant, indicator, inner_product

__all__ = [
    "GramMatrix",
    "gram_matrix",
    "gram_det",
    "projection_norm_sq",
    "projection_norm_sq_minor",
    "cavalieri_both_sides",
    "indicator_gram_lower_bound",
]

#: det below SINGULAR_TOL * prod(diag) counts as singular (scale-free)
SINGULAR_TOL = 1e-14


def _clamped_cholesky(matrix: np.ndarray):
    """Lower-triangular factor with negative pivots clamped to zero.

    Returns (L, clamped) with matrix ≈ L L^T for PSD input; a clamped pivot
    zeroes its column so the factorization continues and det comes out 0.
    """
    a = np.array(matrix, dtype=float)
    n = a.shape[0]
    L = np.zeros_like(a)
    clamped = False
    for j in range(n):
        pivot = a[j, j]
        if pivot <= 0.0:
            clamped = True
            continue
        L[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            col = a[j + 1:, j] / L[j, j]
            L[j + 1:, j] = col
            a[j + 1:, j + 1:] -= np.outer(col, col)
    return L, clamped


class GramMatrix:
    """Symmetric PSD matrix with cached determinant and inverse.

    The determinant comes from the clamped triangular factorization, so a
    family that is numerically dependent yields exactly 0.0 rather than a
    small negative number.
    """

    def __init__(self, matrix):
        m = np.array(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("need a square matrix")
        if not np.allclose(m, m.T, atol=1e-12 * (1.0 + np.abs(m).max(initial=0.0))):
            raise ValueError("matrix is not symmetric")
        m = 0.5 * (m + m.T)
        m.flags.writeable = False
        self.matrix = m
        self._chol = None
        self._det = None
        self._inv = None

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def cholesky(self) -> np.ndarray:
        if self._chol is None:
            self._chol, self._clamped = _clamped_cholesky(self.matrix)
        return self._chol

    @property
    def det(self) -> float:
        if self._det is None:
            L = self.cholesky()
            self._det = 0.0 if self._clamped else float(np.prod(np.diag(L)) ** 2)
        return self._det

    @property
    def is_singular(self) -> bool:
        scale = float(np.prod(np.diag(self.matrix)))
        return self.det < SINGULAR_TOL * scale or scale == 0.0

    def inverse(self) -> np.ndarray:
        if self._inv is None:
            if self.is_singular:
                raise DegeneracyError(
                    f"Gram matrix is singular (det={self.det:.3e})", det=self.det)
            self._inv = np.linalg.inv(self.matrix)
            self._inv.flags.writeable = False
        return self._inv

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.is_singular:
            raise DegeneracyError(
                f"Gram matrix is singular (det={self.det:.3e})", det=self.det)
        return np.linalg.solve(self.matrix, rhs)


def gram_matrix(fs: Sequence[PiecewiseConstant]) -> GramMatrix:
    """Pairwise inner-product matrix of a function family."""
    k = len(fs)
    m = np.empty((k, k))
    for i in range(k):
        for j in range(i + 1):
            m[i, j] = m[j, i] = inner_product(fs[i], fs[j])
    return GramMatrix(m)


def gram_det(fs: Sequence[PiecewiseConstant]) -> float:
    return gram_matrix(fs).det


def projection_norm_sq(fs: Sequence[PiecewiseConstant],
                       h: PiecewiseConstant) -> float:
    """Squared norm of the orthogonal projection of h onto span(fs).

    Solves the normal equations B c = v with v_i = <f_i, h> and returns
    c . v; raises DegeneracyError when the family is numerically dependent.
    """
    b = gram_matrix(fs)
    v = np.array([inner_product(f, h) for f in fs])
    return float(v @ b.solve(v))


def projection_norm_sq_minor(fs: Sequence[PiecewiseConstant],
                             h: PiecewiseConstant) -> float:
    """Same quantity through the explicit cofactor form of the inverse.

    ||Ph||^2 = (1/G) sum_ij (-1)^{i+j} M_ij v_i v_j with M_ij the minors of
    the Gram matrix.  Exponential in the dimension; meant as an independent
    cross-check for small families (dim <= 4).
    """
    b = gram_matrix(fs)
    n = b.dim
    if n > 4:
        raise ValueError("cofactor route is for dim <= 4")
    if b.is_singular:
        raise DegeneracyError(
            f"Gram matrix is singular (det={b.det:.3e})", det=b.det)
    v = np.array([inner_product(f, h) for f in fs])
    total = 0.0
    m = b.matrix
    for i in range(n):
        for j in range(n):
            sub = np.delete(np.delete(m, i, axis=0), j, axis=1)
            minor = float(np.linalg.det(sub)) if n > 1 else 1.0
            total += (-1.0) ** (i + j) * minor * v[i] * v[j]
    return total / b.det


def cavalieri_both_sides(basis: Sequence[PiecewiseConstant],
                         gs: Sequence[PiecewiseConstant]):
    """Both sides of the projected-family determinant identity.

    For an orthonormal ``basis`` {e_1..e_m} with projection P onto its span,
    det Gram((I-P)g_1, …, (I-P)g_k) equals
    det Gram(g_1, …, g_k, e_1, …, e_m).  Returns (lhs, rhs).

    The left side is assembled from inner products alone:
    <(I-P)g_i, (I-P)g_j> = <g_i, g_j> - sum_l <g_i, e_l><g_j, e_l>.
    """
    k, m = len(gs), len(basis)
    plain = np.empty((k, k))
    for i in range(k):
        for j in range(i + 1):
            plain[i, j] = plain[j, i] = inner_product(gs[i], gs[j])
    u = np.array([[inner_product(g, e) for e in basis] for g in gs])
    lhs = GramMatrix(plain - u @ u.T).det

    full = list(gs) + list(basis)
    rhs = gram_det(full)
    return lhs, rhs


def indicator_gram_lower_bound(intervals: Sequence[Interval]):
    """(det, bound) for the indicator family of the given intervals.

    bound = prod_k |D_k \\ (D_1 ∪ … ∪ D_{k-1})|, the product of fresh
    lengths, which never exceeds the Gram determinant.
    """
    det = gram_det([indicator(iv) for iv in intervals])
    bound = 1.0
    for k, iv in enumerate(intervals):
        # fresh length: |iv| minus the measure covered by earlier intervals
        clips = []
        for prev in intervals[:k]:
            lo, hi = max(prev.lo, iv.lo), min(prev.hi, iv.hi)
            if hi > lo:
                clips.append((lo, hi))
        clips.sort()
        covered, reach = 0.0, iv.lo
        for lo, hi in clips:
            if hi > reach:
                covered += hi - max(lo, reach)
                reach = hi
        bound *= iv.length - covered
    return det, bound
