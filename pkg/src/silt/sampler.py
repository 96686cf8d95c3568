"""Joint sampling of white-noise coordinates and integrator paths.

White noise is truncated to the orthonormal cell basis e_i = sqrt(n) 1_cell
of a uniform grid; a path sample is

    x(t_j) = sum_i <A 1_[0,t_j], e_i> z_i,       z iid standard normal,

so each path is an exact linear image x = C z of its own coordinates and
pairings (h, xi) against the same z are available afterwards — that joint
access is what the transform-based tests need.  For A = Identity the
coefficients make the increments exactly z_j / sqrt(n).

Streams are counter-based (Philox) keyed by (master seed, path index), so
any slice of a batch can be regenerated independently.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ResolutionError
from .functions import (
    GridFunction,
    PiecewiseConstant,
    as_step,
    prefix_integral,
)
from .operators import (
    Identity,
    Multiplication,
    Operator,
    ProjectionComplement,
    increment_gram_batch,
)

__all__ = [
    "PathGrid",
    "JointSample",
    "path_coefficients",
    "path_stream",
    "sample_joint",
    "sample_joint_batch",
    "pairing",
    "pairing_batch",
    "pairing_coefficients",
    "ito_sum",
    "ito_sum_batch",
    "bridge_covariance_check",
    "export_paths_csv",
]


@dataclass(frozen=True)
class PathGrid:
    """Uniform grid 0 = t_0 < ... < t_n = 1."""

    n: int = 256

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need n >= 1")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n + 1)


@dataclass(frozen=True)
class JointSample:
    """One path with the white-noise coordinates that generated it."""

    grid: PathGrid
    z: np.ndarray
    x: np.ndarray
    seed: Optional[tuple] = None

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        x = np.asarray(self.x, dtype=float)
        z.flags.writeable = False
        x.flags.writeable = False
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)
        if len(z) != self.grid.n or len(x) != self.grid.n + 1:
            raise ResolutionError("coordinate/path lengths do not match grid")
        if x[0] != 0.0 or not np.all(np.isfinite(x)):
            raise ValueError("paths must start at 0 and stay finite")


def path_coefficients(A: Operator, grid: PathGrid) -> np.ndarray:
    """(n+1, n) matrix C with C[j, i] = <A 1_[0, t_j], e_i>."""
    n = grid.n
    rootn = np.sqrt(n)
    tri = np.tril(np.ones((n + 1, n)), -1)  # cell i fully inside [0, t_j] iff i < j

    if isinstance(A, Identity):
        return tri / rootn

    if isinstance(A, Multiplication):
        bp, cum = prefix_integral(A.phi)
        cell_mass = np.diff(np.interp(grid.times, bp, cum))
        return tri * (rootn * cell_mass)

    if isinstance(A, ProjectionComplement):
        c = tri / rootn
        times = grid.times
        for e in A.basis:
            bp, cum = prefix_integral(e)
            p = np.interp(times, bp, cum)          # <1_[0,t_j], e>
            q = rootn * np.diff(p)                 # <e, e_i>
            c = c - np.outer(p, q)
        return c

    raise TypeError(f"unsupported operator {type(A).__name__}")


def path_stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for one path, keyed by (seed, path index)."""
    return np.random.Generator(np.random.Philox(key=[seed, index]))


def sample_joint(A: Operator, grid: PathGrid,
                 rng: np.random.Generator,
                 coeffs: Optional[np.ndarray] = None) -> JointSample:
    """Draw one joint sample (z, x) using the supplied generator."""
    if coeffs is None:
        coeffs = path_coefficients(A, grid)
    z = rng.standard_normal(grid.n)
    return JointSample(grid=grid, z=z, x=coeffs @ z)


def sample_joint_batch(A: Operator, grid: PathGrid, n_paths: int,
                       seed: int, start: int = 0,
                       coeffs: Optional[np.ndarray] = None):
    """(Z, X) arrays for paths ``start .. start+n_paths-1`` of a seed.

    Path i always sees the same stream regardless of batching, so shards of
    a big run can be produced independently and merged deterministically.
    """
    if coeffs is None:
        coeffs = path_coefficients(A, grid)
    z = np.empty((n_paths, grid.n))
    for i in range(n_paths):
        z[i] = path_stream(seed, start + i).standard_normal(grid.n)
    return z, z @ coeffs.T


def pairing_coefficients(h: PiecewiseConstant, grid: PathGrid) -> np.ndarray:
    """Coefficients <h, e_i> so that (h, xi) = coeffs . z."""
    if isinstance(h, GridFunction):
        if h.n != grid.n:
            raise ResolutionError(f"grid mismatch: h has n={h.n}, grid n={grid.n}")
        return h.values / np.sqrt(grid.n)
    bp, cum = prefix_integral(as_step(h))
    masses = np.diff(np.interp(grid.times, bp, cum))
    return np.sqrt(grid.n) * masses


def pairing(sample: JointSample, h: PiecewiseConstant) -> float:
    """The Gaussian pairing (h, xi) evaluated on the sample's coordinates."""
    return float(pairing_coefficients(h, sample.grid) @ sample.z)


def pairing_batch(z: np.ndarray, h: PiecewiseConstant,
                  grid: PathGrid) -> np.ndarray:
    return z @ pairing_coefficients(h, grid)


def ito_sum(values: np.ndarray, path: np.ndarray) -> float:
    """Left-point stochastic sum  sum_j values[j] (x_{j+1} - x_j)."""
    values = np.asarray(values, dtype=float)
    path = np.asarray(path, dtype=float)
    if len(values) != len(path) - 1:
        raise ResolutionError("need one integrand value per increment")
    return float(values @ np.diff(path))


def ito_sum_batch(values: np.ndarray, paths: np.ndarray) -> np.ndarray:
    """Row-wise left-point sums for (m, n) integrands and (m, n+1) paths."""
    return np.einsum("mj,mj->m", values, np.diff(paths, axis=1))


def _bridge_covariance(knots: Sequence[float], times: np.ndarray) -> np.ndarray:
    """Covariance at ``times`` of independent Brownian bridges glued at knots."""
    pts = np.array([0.0, *sorted(knots), 1.0])
    cov = np.zeros((len(times), len(times)))
    block = np.searchsorted(pts, times, side="right") - 1
    block = np.clip(block, 0, len(pts) - 2)
    for b in range(len(pts) - 1):
        sel = np.where(block == b)[0]
        if len(sel) == 0:
            continue
        left, length = pts[b], pts[b + 1] - pts[b]
        u = times[sel] - left
        cov[np.ix_(sel, sel)] = np.minimum.outer(u, u) - np.outer(u, u) / length
    return cov


def bridge_covariance_check(knots: Sequence[float], n: int = 128):
    """(cov_a, cov_b): operator covariance vs glued-bridge covariance.

    cov_a[i, j] = <A 1_[0,t_i], A 1_[0,t_j]> for the projection complement
    of the partition's normalized indicators; cov_b is assembled from the
    independent piecewise-bridge representation.  The two must agree to
    float accuracy.
    """
    A = ProjectionComplement.from_partition(list(knots))
    grid = PathGrid(n)
    times = grid.times
    zeros = np.zeros_like(times)
    # one call over the whole prefix family gives every pair at once
    cov_a = increment_gram_batch(A, zeros[None, :], times[None, :])[0]
    cov_b = _bridge_covariance(knots, times)
    return cov_a, cov_b


def export_paths_csv(path: str, grid: PathGrid, xs: np.ndarray) -> None:
    """Write grid times against sampled paths: columns t, x0, x1, ..."""
    xs = np.atleast_2d(xs)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x{i}" for i in range(len(xs))])
        for j, t in enumerate(grid.times):
            writer.writerow([f"{t:.10g}"] + [repr(float(v)) for v in xs[:, j]])
