"""Smoothed self-intersection local times and their moments.

The k-fold self-intersection local time of an integrator path is the
epsilon -> 0 limit of

    T_{eps,k} = ∫_{D_k} prod_{i<k} p_eps(x(t_{i+1}) - x(t_i)) dt,

with p_eps the centered Gaussian density of variance eps.  Two consistent
views of its moments are implemented:

* **path side** — discretize the simplex integral on the sampling grid
  (strictly increasing grid indices, weight n^{-k}) and average over paths;
* **smoothing side** — mixed moments of several T_{eps} collapse to
  deterministic simplex integrals: for smoothing parameters eps_1..eps_q
  attached to q increment families with joint Gram matrix B,

      E prod p_{eps_j}(increments) = (2 pi)^{-d/2} det(E + B)^{-1/2},

  where d is the total number of increments and E carries each family's
  epsilon on its diagonal block.

The eps -> 0 limits of means are available in closed form for the Wiener
case and as a masses integral for multiplication operators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import IntegrabilityError
from .functions import PiecewiseConstant, prefix_integral
from .operators import Operator, increment_gram_batch
from .sampler import JointSample, PathGrid, path_coefficients, sample_joint_batch
from .simplex import MCEstimate, mc_simplex_integrate

__all__ = [
    "EpsSchedule",
    "gauss_kernel",
    "estimate_T_eps",
    "estimate_T_eps_batch",
    "mean_T_path_mc",
    "smoothed_density",
    "moment_smoothed",
    "mean_T_eps_quad",
    "mean_T_wiener",
    "mean_T_mult",
    "lattice_mean_T2",
    "extrapolate_sqrt_eps",
]

#: fixed path-batch size for the reproducibility contract
PATH_BATCH = 256


def path_batch_size(n: int) -> int:
    """Batch size keeping the (batch, n, n) kernel tensors near 128 MB."""
    return max(4, min(PATH_BATCH, (1 << 24) // max(n * n, 1)))


@dataclass(frozen=True)
class EpsSchedule:
    """Strictly decreasing positive smoothing parameters."""

    values: tuple

    def __post_init__(self):
        vals = tuple(float(e) for e in self.values)
        object.__setattr__(self, "values", vals)
        if not vals:
            raise ValueError("schedule must not be empty")
        if any(e <= 0 for e in vals):
            raise ValueError("smoothing parameters must be positive")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise ValueError("schedule must be strictly decreasing")

    def __iter__(self):
        return iter(self.values)


def gauss_kernel(z: np.ndarray, eps: float) -> np.ndarray:
    """Centered Gaussian density of variance eps."""
    z = np.asarray(z, dtype=float)
    return np.exp(-z * z / (2.0 * eps)) / math.sqrt(2.0 * math.pi * eps)


# ---------------------------------------------------------------------------
# path side

def estimate_T_eps_batch(x: np.ndarray, k: int,
                         eps_list: Sequence[float]) -> np.ndarray:
    """Discretized T_{eps,k} for a batch of paths and several eps at once.

    ``x`` has shape (m, n+1); the estimator sums over strictly increasing
    grid indices 0 <= j_1 < ... < j_k <= n-1 with weight n^{-k}, evaluating
    the path at left endpoints.  Shape of the result: (len(eps_list), m).

    The chain structure of the product prod_i p(x_{j_{i+1}} - x_{j_i})
    makes the sum a (k-1)-step masked matrix recursion rather than a
    k-fold loop.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m, n1 = x.shape
    n = n1 - 1
    if k < 2:
        raise ValueError("need k >= 2")
    xl = x[:, :n]
    diff = xl[:, None, :] - xl[:, :, None]          # diff[b, j, l] = x_l - x_j
    mask = np.triu(np.ones((n, n)), 1)
    out = np.empty((len(eps_list), m))
    for e_idx, eps in enumerate(eps_list):
        kern = gauss_kernel(diff, eps) * mask
        w = np.ones((m, n))
        for _ in range(k - 1):
            w = np.einsum("bj,bjl->bl", w, kern)
        out[e_idx] = w.sum(axis=1) / float(n) ** k
    return out


def estimate_T_eps(sample: JointSample, k: int, eps: float) -> float:
    """Discretized simplex sum for one path (see the batch version)."""
    return float(estimate_T_eps_batch(sample.x[None, :], k, [eps])[0, 0])


def mean_T_path_mc(A: Operator, k: int, eps_list: Sequence[float],
                   grid: PathGrid, n_paths: int, seed: int) -> list[MCEstimate]:
    """Path-MC means of T_{eps,k}, one estimate per eps, on shared paths."""
    coeffs = path_coefficients(A, grid)
    batch = path_batch_size(grid.n)
    sums = np.zeros(len(eps_list))
    sumsq = np.zeros(len(eps_list))
    done = 0
    while done < n_paths:
        b = min(batch, n_paths - done)
        _, x = sample_joint_batch(A, grid, b, seed, start=done, coeffs=coeffs)
        t = estimate_T_eps_batch(x, k, eps_list)
        sums += t.sum(axis=1)
        sumsq += (t * t).sum(axis=1)
        done += b
    means = sums / n_paths
    var = (sumsq - n_paths * means ** 2) / (n_paths - 1)
    return [MCEstimate(mean=float(mu), stderr=float(np.sqrt(v / n_paths)),
                       n_samples=n_paths, seed=seed)
            for mu, v in zip(means, np.maximum(var, 0.0))]


# ---------------------------------------------------------------------------
# smoothing side

def smoothed_density(A: Operator, eps: Sequence[float],
                     los: np.ndarray, his: np.ndarray) -> np.ndarray:
    """(2 pi)^{-d/2} det(E + B)^{-1/2} at explicit increment families.

    ``los``/``his`` have shape (m, d); ``eps`` has length d and carries the
    smoothing parameter attached to each increment.  Values where E + B is
    not positive definite come out non-finite (and are rejected upstream).
    """
    b = increment_gram_batch(A, los, his)
    d = b.shape[-1]
    e = np.asarray(eps, dtype=float)
    b = b + np.diag(e)
    dets = np.linalg.det(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = (2.0 * math.pi) ** (-d / 2.0) / np.sqrt(dets)
    vals[~(dets > 0.0)] = np.inf
    return vals


def moment_smoothed(A: Operator, k: int, p: int, eps: Sequence[float],
                    n_mc: int = 10 ** 6, seed: int = 0,
                    shards: int = 1) -> MCEstimate:
    """E[prod_{j<=2p} T_{eps_j,k}] by Monte Carlo over (D_k)^{2p}.

    ``eps`` holds 2p smoothing parameters (a scalar is broadcast); each of
    the 2p tuples contributes k-1 increments smoothed by its own epsilon.
    eps = 0 is allowed — that is the moment of the local time itself — and
    relies on the Gram determinant staying positive a.e.; a rejection
    fraction above the integrability threshold raises IntegrabilityError.
    """
    q = 2 * p
    eps_vec = np.broadcast_to(np.asarray(eps, dtype=float), (q,))
    if np.any(eps_vec < 0):
        raise ValueError("smoothing parameters must be >= 0")
    full_eps = np.repeat(eps_vec, k - 1)

    def integrand(t: np.ndarray) -> np.ndarray:
        m = t.shape[0]
        los = t[..., :-1].reshape(m, q * (k - 1))
        his = t[..., 1:].reshape(m, q * (k - 1))
        return smoothed_density(A, full_eps, los, his)

    est = mc_simplex_integrate(integrand, k, n=n_mc, seed=seed,
                               shards=shards, copies=q)
    if est.rejected_fraction > 0.01:
        raise IntegrabilityError(
            f"rejection fraction {est.rejected_fraction:.2%} in smoothed "
            f"moment (k={k}, p={p}, eps={tuple(eps_vec)})",
            rejected_fraction=est.rejected_fraction)
    return est


def mean_T_eps_quad(A: Operator, k: int, eps: float, n_mc: int = 10 ** 6,
                    seed: int = 0, shards: int = 1) -> MCEstimate:
    """E[T_{eps,k}] as a single-family simplex integral (p = 1/2 case)."""
    full_eps = np.full(k - 1, float(eps))

    def integrand(t: np.ndarray) -> np.ndarray:
        return smoothed_density(A, full_eps, t[:, :-1], t[:, 1:])

    est = mc_simplex_integrate(integrand, k, n=n_mc, seed=seed, shards=shards)
    if est.rejected_fraction > 0.01:
        raise IntegrabilityError(
            f"rejection fraction {est.rejected_fraction:.2%} in mean "
            f"(k={k}, eps={eps})", rejected_fraction=est.rejected_fraction)
    return est


# ---------------------------------------------------------------------------
# closed forms and limits

def mean_T_wiener(k: int) -> float:
    """E[T_k] for the Wiener process: 1 / (2^{(k-1)/2} Gamma((k+3)/2))."""
    if k < 2:
        raise ValueError("need k >= 2")
    return 1.0 / (2.0 ** ((k - 1) / 2.0) * math.gamma((k + 3) / 2.0))


def mean_T_mult(phi: PiecewiseConstant, k: int, n_mc: int = 10 ** 6,
                seed: int = 0, shards: int = 1) -> MCEstimate:
    """E[T_k] for a multiplication operator.

    (2 pi)^{-(k-1)/2} ∫_{D_k} prod_i (∫_{t_i}^{t_{i+1}} phi^2)^{-1/2} dt,
    with the masses read off a prefix integral of phi^2.
    """
    cum2_bp, cum2 = _phi_sq_prefix(phi)
    front = (2.0 * math.pi) ** (-(k - 1) / 2.0)

    def integrand(t: np.ndarray) -> np.ndarray:
        masses = np.interp(t[:, 1:], cum2_bp, cum2) \
            - np.interp(t[:, :-1], cum2_bp, cum2)
        with np.errstate(divide="ignore"):
            vals = front * np.prod(masses, axis=1) ** -0.5
        return vals

    return mc_simplex_integrate(integrand, k, n=n_mc, seed=seed, shards=shards)


def _phi_sq_prefix(phi: PiecewiseConstant):
    from .functions import StepFunction, as_step

    s = as_step(phi)
    sq = StepFunction(s.breakpoints, s.values ** 2)
    return prefix_integral(sq)


def lattice_mean_T2(n: int, eps: float) -> float:
    """Exact expectation of the discretized T_{eps,2} on an n-cell grid.

    E p_eps(w(t_j) - w(t_i)) = p_{(j-i)/n + eps}(0); summing over pairs
    gives sum_d (n-d) n^{-2} (2 pi (d/n + eps))^{-1/2}.
    """
    d = np.arange(1, n)
    return float(np.sum((n - d) / n ** 2
                        / np.sqrt(2.0 * math.pi * (d / n + eps))))


def sqrt_eps_weights(eps_values: Sequence[float]) -> np.ndarray:
    """Weights w with sum(w * means) = the eps -> 0 extrapolated value.

    The smoothed means behave like m0 + c1 sqrt(eps) + c2 eps + ... near
    zero, so extrapolation works in powers of s = sqrt(eps): each stage of
    successive (Richardson-type) elimination removes the current leading
    affine-in-s correction.  For p schedule points this is the intercept of
    the degree-(p-1) polynomial in s through the points, capped at degree 2
    (a least-squares quadratic beyond three points, where higher exact
    interpolation would only amplify noise).
    """
    s = np.sqrt(np.asarray(eps_values, dtype=float))
    if len(s) < 2:
        raise ValueError("need at least two schedule points")
    if len(np.unique(s)) != len(s):
        raise ValueError("schedule points must be distinct")
    degree = min(len(s) - 1, 2)
    design = np.stack([s ** j for j in range(degree + 1)], axis=1)
    # Intercept row of the pseudo-inverse: exact interpolation weights when
    # the design is square, least-squares weights otherwise.
    return np.linalg.pinv(design)[0]


def extrapolate_sqrt_eps(eps_values: Sequence[float], means: Sequence[float],
                         stderrs: Optional[Sequence[float]] = None):
    """Extrapolate smoothed means to eps = 0; returns (value, stderr).

    The reported stderr propagates the per-point stderrs through the
    extrapolation weights assuming independent estimates; callers holding
    per-path data can do better (see the transform helpers).
    """
    w = sqrt_eps_weights(eps_values)
    y = np.asarray(means, dtype=float)
    value = float(w @ y)
    if stderrs is None:
        return value, 0.0
    se = np.asarray(stderrs, dtype=float)
    return value, float(np.sqrt(np.sum((w * se) ** 2)))
