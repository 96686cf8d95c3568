"""Martingale-representation integrands and their verification.

Three layers, mirroring how the representations are actually checked:

* a deterministic transform-level identity for the smoothed delta functional
  of a single increment (``clark_delta_fw_check``), which is a pure
  Newton-Leibniz statement about Gaussian densities and needs no sampling;
* pathwise L2 residuals that realize the stochastic-integral side on grid
  paths and measure how much of the functional's variance the predictable
  integrand explains (``clark_delta_l2_residual``, ``clark_wiener_l2_residual``
  with the explicit ``wiener_beta`` integrand);
* a transform-level check of the general-integrator representation
  (``clark_general_fw_check``), again reduced to deterministic Gaussian
  identities plus ordinary Monte Carlo over the time simplex.

Throughout, a heat kernel in the time variable is integrated in closed form
via normal CDFs: for sigma > 0,

    d/dsigma Phi(|y| / sqrt(sigma)) = sign(y)/2 * d/dy p_sigma(y),

so bands of the variance integral of the density's space-derivative reduce
to differences of ``ndtr`` values (``_band_integral``).  That keeps every
time integral that can be done exactly out of the sampling error budget.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from .errors import ScopeError, ToleranceError
from .functions import Interval, PiecewiseConstant, as_step, prefix_integral
from .gram import GramMatrix
from .local_time import (estimate_T_eps_batch, lattice_mean_T2,
                         mean_T_wiener, path_batch_size)
from .operators import (Identity, Operator, increment_gram,
                        increment_gram_batch, pair_masses_batch)
from .sampler import (JointSample, PathGrid, ito_sum_batch,
                      path_coefficients, sample_joint_batch)
from .simplex import (CHUNK, MCEstimate, SimplexTuple, sample_simplex_batch,
                      shard_rng, _shard_sizes)

__all__ = [
    "GaussianDensity", "ClarkDecomposition", "BetaMatrices",
    "density_grad", "clark_delta_fw_check", "clark_delta_l2_residual",
    "wiener_beta", "wiener_clark_decomposition", "clark_wiener_l2_residual",
    "general_beta_matrices", "clark_general_fw_check", "residual_curve_csv",
]

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# Gaussian densities with cached precision

@dataclass(frozen=True)
class GaussianDensity:
    """Centered normal density with a cached precision matrix.

    The covariance must be positive definite; construction fails with the
    Gram module's degeneracy error otherwise.
    """

    covariance: GramMatrix

    def __post_init__(self):
        precision = self.covariance.inverse()
        object.__setattr__(self, "_precision", precision)
        d = self.covariance.dim
        norm = (TWO_PI) ** (-d / 2.0) / math.sqrt(self.covariance.det)
        object.__setattr__(self, "_norm", norm)

    @property
    def dim(self) -> int:
        return self.covariance.dim

    @property
    def precision(self) -> np.ndarray:
        return self._precision

    def pdf(self, x) -> np.ndarray:
        """Density at x; batched over leading axes of an (..., d) array."""
        x = np.asarray(x, dtype=float)
        q = np.einsum("...i,ij,...j->...", x, self._precision, x)
        return self._norm * np.exp(-0.5 * q)

    def grad(self, x) -> np.ndarray:
        """Full gradient, shape (..., d)."""
        x = np.asarray(x, dtype=float)
        return -(x @ self._precision) * self.pdf(x)[..., None]


def density_grad(d: GaussianDensity, x, j: int) -> float:
    """j-th partial derivative of the density: -(R^{-1} x)_j * p_R(x)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (d.dim,):
        raise ValueError(f"x must have shape ({d.dim},), got {x.shape}")
    if not 0 <= j < d.dim:
        raise ValueError(f"coordinate j={j} out of range for dim {d.dim}")
    return float(d.grad(x)[j])


# ---------------------------------------------------------------------------
# heat-kernel helpers (variance may be an array)

def _gauss_pdf(y, var):
    """p_var(y) with elementwise variance."""
    y = np.asarray(y, dtype=float)
    var = np.asarray(var, dtype=float)
    return np.exp(-y * y / (2.0 * var)) / np.sqrt(TWO_PI * var)


def _gauss_pdf_grad(y, var):
    """d/dy p_var(y) = -(y/var) p_var(y), elementwise."""
    y = np.asarray(y, dtype=float)
    var = np.asarray(var, dtype=float)
    return -(y / var) * _gauss_pdf(y, var)


def _band_integral(y, var_lo, var_hi):
    """Exact ∫ over sigma in [var_lo, var_hi] of d/dy p_sigma(y) dsigma.

    Equals 2 sign(y) (Phi(|y|/sqrt(var_hi)) - Phi(|y|/sqrt(var_lo))); the
    lower limit 0 is allowed (Phi -> 1), and y = 0 gives 0.  Bands of zero
    or negative width give 0.
    """
    y = np.asarray(y, dtype=float)
    lo = np.asarray(var_lo, dtype=float)
    hi = np.maximum(np.asarray(var_hi, dtype=float), lo)
    ay = np.abs(y)
    with np.errstate(divide="ignore", invalid="ignore"):
        upper = ndtr(ay / np.sqrt(hi))
        lower = ndtr(ay / np.sqrt(lo))
    out = 2.0 * np.sign(y) * (upper - lower)
    return np.where(ay == 0.0, 0.0, out)


# ---------------------------------------------------------------------------
# delta functional of a single increment: deterministic transform identity

def clark_delta_fw_check(h: PiecewiseConstant, s: float, t: float,
                         quad_tol: float = 1e-9) -> Tuple[float, float]:
    """Both sides of the transform-level representation of the increment delta.

    lhs = p_{t-s}(∫_s^t h); rhs = 1/sqrt(2 pi (t-s)) plus the quadrature of
    d/dy p_{t-s} evaluated along the running shift ∫_s^u h, times h(u).  The
    two agree exactly by the fundamental theorem of calculus, so the gap
    measures only quadrature error.  Deterministic.
    """
    if not 0.0 <= s < t <= 1.0:
        raise ValueError(f"need 0 <= s < t <= 1, got s={s}, t={t}")
    c = t - s
    step = as_step(h)
    bp, cum = prefix_integral(step)
    shift_s = float(np.interp(s, bp, cum))

    def running_shift(u):
        return np.interp(u, bp, cum) - shift_s

    lhs = float(_gauss_pdf(running_shift(t), c))
    mean = 1.0 / math.sqrt(TWO_PI * c)

    def integrand(u):
        return float(_gauss_pdf_grad(running_shift(u), c) * step(u))

    pts = [float(b) for b in step.breakpoints if s < b < t]
    val, err = integrate.quad(integrand, s, t, points=pts or None,
                              limit=max(100, 10 * (len(pts) + 1)),
                              epsabs=quad_tol / 10.0, epsrel=1e-12)
    if err > quad_tol:
        raise ToleranceError(
            f"quadrature error {err:.2e} above tolerance {quad_tol:.2e}")
    return lhs, mean + val


def clark_delta_l2_residual(s: float, t: float, eps: float, grid: PathGrid,
                            n_paths: int = 10 ** 4,
                            seed: int = 0) -> MCEstimate:
    """L2 residual of the pathwise representation of the smoothed delta.

    Streams Wiener paths on the grid and measures
    E[(f_eps(w(t)-w(s)) - mean_eps - left-point Ito sum of the integrand)^2]
    with integrand d/dy p_{t-u+eps}(w(u)-w(s)) on [s, t) and
    mean_eps = 1/sqrt(2 pi (t-s+eps)).  Both the centering and the
    integrand are exact for the grid model (Gaussian convolutions are
    closed under the lattice), so the residual is pure discretization
    error of the stochastic integral and shrinks as eps drops and the
    grid refines.
    """
    if eps <= 0.0:
        raise ValueError("need eps > 0")
    times = grid.times
    i_s = int(round(s * grid.n))
    i_t = int(round(t * grid.n))
    if abs(times[i_s] - s) > 1e-12 or abs(times[i_t] - t) > 1e-12:
        raise ValueError("s and t must be grid-aligned")
    if not 0 <= i_s < i_t <= grid.n:
        raise ValueError(f"need s < t on the grid, got indices {i_s}, {i_t}")

    mean_eps = 1.0 / math.sqrt(TWO_PI * (t - s + eps))
    var_row = t - times[i_s:i_t] + eps  # at left endpoints u_j
    coeffs = path_coefficients(Identity(), grid)
    batch = path_batch_size(grid.n)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_paths:
        b = min(batch, n_paths - done)
        _, x = sample_joint_batch(Identity(), grid, b, seed, start=done,
                                  coeffs=coeffs)
        y = x[:, i_s:i_t] - x[:, i_s:i_s + 1]
        vals = _gauss_pdf_grad(y, var_row)
        ito = np.einsum("mj,mj->m", vals, np.diff(x[:, i_s:i_t + 1], axis=1))
        target = _gauss_pdf(x[:, i_t] - x[:, i_s], eps)
        r2 = (target - mean_eps - ito) ** 2
        total += float(r2.sum())
        total_sq += float((r2 * r2).sum())
        done += b
    mean = total / n_paths
    var = max(total_sq / n_paths - mean * mean, 0.0)
    return MCEstimate(mean, math.sqrt(var / n_paths), n_paths, seed)


# ---------------------------------------------------------------------------
# Wiener self-intersection integrand

def _tau_index(grid_n: int, tau: float) -> int:
    idx = int(round(tau * grid_n))
    if abs(tau - idx / grid_n) > 1e-12 or not 0 < idx <= grid_n:
        raise ValueError(f"tau={tau} must be a grid point in (0, 1]")
    return idx


def wiener_beta(sample: JointSample, k: int, tau: float,
                eps: float = 0.0) -> float:
    """Predictable integrand of the k-fold self-intersection functional.

    Realizes, at one grid time tau, the sum over r of simplex integrals of
    heat-kernel derivative factors with (r-1)-fold nested stochastic
    integrals.  Time integrals of the derivative factor over the last free
    variable are done in closed form (``_band_integral``); the remaining
    time variables use left-point cell sums on the sample's grid, and the
    nested stochastic integrals are left-point Ito sums over the path's
    earlier increments.  ``eps > 0`` shifts every kernel variance, giving
    the smoothed integrand used by the L2 residuals.

    Supports k = 2 and k = 3; the structure for larger k adds nothing new
    but multiplies the nesting combinatorics.
    """
    if k not in (2, 3):
        raise ScopeError(f"wiener beta implemented for k in {{2, 3}}, got {k}")
    n = sample.grid.n
    x = sample.x
    itau = _tau_index(n, tau)
    y_tau = x[itau] - x[:itau]  # w(tau) - w(t_l), left points t_l < tau
    band_tau = _band_integral(y_tau, eps, 1.0 - tau + eps)

    if k == 2:
        # single factor: integrate the t2 band exactly, sum t1 over cells
        return float(band_tau.sum() / n)

    # k == 3: three terms, indexed by which gaps carry a kernel factor.
    # (a) factor on the gap straddling tau, deterministic weight on the last
    #     gap: sum over t1 cells and t2 cells in [tau, 1] (midpoint variance),
    #     with the t3 integral 2 sqrt(1 - t2) / sqrt(2 pi) in closed form.
    m = n - itau
    sig = (np.arange(m) + 0.5) / n + eps
    t2_mid = tau + (np.arange(m) + 0.5) / n
    weight_t3 = (2.0 * (np.sqrt(1.0 - t2_mid + eps) - math.sqrt(eps))
                 / math.sqrt(TWO_PI))
    grads = _gauss_pdf_grad(y_tau[:, None], sig[None, :])
    term_a = float((grads @ weight_t3).sum()) / (n * n)

    # (b) factor on the last gap, deterministic weight on the first: the t1
    #     integral is 2 (sqrt(t2+eps) - sqrt(eps)) / sqrt(2 pi) exactly; the
    #     t3 band in closed form.
    t2_left = np.arange(itau) / n
    weight_t1 = (2.0 * (np.sqrt(t2_left + eps) - math.sqrt(eps))
                 / math.sqrt(TWO_PI))
    term_b = float(weight_t1 @ band_tau) / n

    # (c) both gaps carry kernel factors: the first becomes a nested Ito sum
    #     S(t2) = ∫_0^{t2} (∫_0^s d/dy p_{t2-s+eps}(w(s)-w(t1)) dt1) dw(s).
    dw = np.diff(x[:itau + 1])
    nested = np.zeros(itau)
    for l2 in range(1, itau):
        y = x[:l2, None] - x[None, :l2]
        var = (l2 - np.arange(l2))[:, None] / n + eps
        rows = np.sum(np.tril(_gauss_pdf_grad(y, var)), axis=1)
        nested[l2] = float(dw[:l2] @ rows) / n
    term_c = float(band_tau @ nested) / n
    return term_a + term_b + term_c


@dataclass(frozen=True)
class ClarkDecomposition:
    """Constant-plus-stochastic-integral decomposition evaluated on a grid."""

    constant: float
    taus: np.ndarray
    integrand: np.ndarray
    residual: Optional[MCEstimate] = None

    def __post_init__(self):
        taus = np.asarray(self.taus, dtype=float)
        vals = np.asarray(self.integrand, dtype=float)
        taus.flags.writeable = False
        vals.flags.writeable = False
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "integrand", vals)
        if not math.isfinite(self.constant):
            raise ValueError("constant term must be finite")
        if taus.shape != vals.shape:
            raise ValueError("taus and integrand must align")
        if not np.all(np.isfinite(vals)):
            raise ValueError("integrand must be finite at the grid points")


def wiener_clark_decomposition(sample: JointSample, k: int,
                               eps: float = 0.0) -> ClarkDecomposition:
    """Mean term and integrand values at every interior grid point."""
    n = sample.grid.n
    taus = np.arange(1, n) / n
    vals = np.array([wiener_beta(sample, k, float(tau), eps) for tau in taus])
    return ClarkDecomposition(mean_T_wiener(k), taus, vals)


# ---------------------------------------------------------------------------
# Wiener L2 residual (k = 2)

def _beta_lattice_batch(x: np.ndarray, eps: float) -> np.ndarray:
    """Smoothed integrand matched to the lattice functional, (m, n).

    Column l holds, for each path, the best predictable coefficient of the
    increment over cell l for the discretized pair functional:
    n^{-2} sum_{j1 <= l} sum_{j2 > l} d/dy p_{(j2-l)/n + eps}(x_l - x_{j1}).
    The inner j2 sum is collapsed to a midpoint variance band and done in
    closed form, so the cost stays O(n^2) per path.
    """
    m, np1 = x.shape
    n = np1 - 1
    out = np.zeros((m, n))
    lo = eps + 0.5 / n
    for l in range(n - 1):
        y = x[:, l:l + 1] - x[:, :l + 1]
        hi = eps + (n - l - 0.5) / n
        out[:, l] = _band_integral(y, lo, hi).sum(axis=1) / n
    return out


def clark_wiener_l2_residual(k: int, eps_schedule: Sequence[float],
                             grid: PathGrid, n_paths: int = 10 ** 4,
                             seed: int = 0,
                             use_beta: bool = True) -> list[MCEstimate]:
    """Per-eps L2 residuals of the self-intersection representation.

    For each eps in the schedule, estimates
    E[(T_{eps,2} - mean_eps - Ito sum of the smoothed integrand)^2] over
    ``n_paths`` Wiener paths.  The centering is the exact lattice mean, so
    the residual measures only how much variance the predictable integrand
    fails to explain.  ``use_beta=False`` zeroes the integrand (the
    ablation), turning each residual into an estimate of Var[T_{eps,2}].

    Paths are shared across the schedule (same seed and stream), so
    comparisons along the schedule and against the ablation are pathwise.
    """
    if k != 2:
        raise ScopeError(f"residual check implemented for k = 2, got {k}")
    schedule = [float(e) for e in eps_schedule]
    if any(e <= 0.0 for e in schedule):
        raise ValueError("schedule entries must be positive")
    n = grid.n
    centers = [lattice_mean_T2(n, e) for e in schedule]
    coeffs = path_coefficients(Identity(), grid)
    batch = path_batch_size(n)
    totals = np.zeros(len(schedule))
    totals_sq = np.zeros(len(schedule))
    done = 0
    while done < n_paths:
        b = min(batch, n_paths - done)
        _, x = sample_joint_batch(Identity(), grid, b, seed, start=done,
                                  coeffs=coeffs)
        t_hat = estimate_T_eps_batch(x, 2, schedule)
        for i, eps in enumerate(schedule):
            if use_beta:
                ito = ito_sum_batch(_beta_lattice_batch(x, eps), x)
            else:
                ito = 0.0
            r2 = (t_hat[i] - centers[i] - ito) ** 2
            totals[i] += float(r2.sum())
            totals_sq[i] += float((r2 * r2).sum())
        done += b
    out = []
    for i in range(len(schedule)):
        mean = float(totals[i] / n_paths)
        var = max(float(totals_sq[i]) / n_paths - mean * mean, 0.0)
        out.append(MCEstimate(mean, math.sqrt(var / n_paths), n_paths, seed))
    return out


def residual_curve_csv(path: str, eps_schedule: Sequence[float], grid_n: int,
                       estimates: Sequence[MCEstimate]) -> None:
    """Write one residual curve as CSV (epsilon, grid_n, residual, stderr)."""
    with open(path, "w") as fh:
        fh.write("epsilon,grid_n,residual,stderr\n")
        for eps, est in zip(eps_schedule, estimates):
            fh.write(f"{float(eps)!r},{grid_n},{float(est.mean)!r},"
                     f"{float(est.stderr)!r}\n")


# ---------------------------------------------------------------------------
# general integrators: partial-increment covariances and the transform check

@dataclass(frozen=True)
class BetaMatrices:
    """Covariance split B_full = B_partial + R for partial increments.

    ``r_positive_definite`` reports whether the remainder covariance is
    numerically positive definite; the representation assumes it, so the
    flag is informational rather than an error.
    """

    b_full: GramMatrix
    b_partial: GramMatrix
    r: GramMatrix
    r_positive_definite: bool


def general_beta_matrices(A: Operator, t: SimplexTuple,
                          theta: float) -> BetaMatrices:
    """Increment covariances at interpolation depth theta into each gap.

    B_partial is the Gram matrix of the images of the partial increments
    [t_i, t_i + theta (t_{i+1} - t_i)], B_full the same at theta = 1, and
    R = B_full - B_partial.  theta = 1 gives R = 0; theta = 0 gives
    R = B_full.
    """
    times = np.asarray(t.times, dtype=float)
    if len(times) < 2:
        raise ValueError("need at least two simplex times")
    if np.any(np.diff(times) <= 0.0) or times[0] <= 0.0 or times[-1] >= 1.0:
        raise ValueError("need strictly increasing times inside (0, 1)")
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    los = times[:-1]
    gaps = np.diff(times)
    full = increment_gram(A, [Interval(lo, lo + g)
                              for lo, g in zip(los, gaps)])
    partial = increment_gram(A, [Interval(lo, lo + theta * g)
                                 for lo, g in zip(los, gaps)])
    r_mat = full.matrix - partial.matrix
    try:
        np.linalg.cholesky(r_mat)
        pd = True
    except np.linalg.LinAlgError:
        pd = False
    return BetaMatrices(full, partial, GramMatrix(r_mat), pd)


def _general_rhs_chunk(A: Operator, k: int, h: PiecewiseConstant,
                       m: int, rng: np.random.Generator) -> np.ndarray:
    """Samples of the representation's right side on one simplex chunk.

    Writes the transform as p_B(0) plus the theta integral of
    sum_j d_j p_B(V(theta)) * gap_j * (A* h)(t_j + theta gap_j), with a
    single uniform theta per tuple (unbiased for the theta integral).
    The Gram matrix B covers the k-1 inner gaps, matching the transform
    integrand's convention.  Non-finite entries mark degenerate tuples
    for rejection upstream.
    """
    ts = sample_simplex_batch(k, 0.0, 1.0, m, rng)
    theta = rng.uniform(0.0, 1.0, size=m)
    los, his = ts[:, :-1], ts[:, 1:]
    gaps = his - los
    d = k - 1
    bmats = increment_gram_batch(A, los, his)
    dets = bmats[:, 0, 0].copy() if d == 1 else np.linalg.det(bmats)
    good = dets > 0.0
    vals = np.full(m, np.inf)
    if not np.any(good):
        return vals
    norm = (TWO_PI) ** (-d / 2.0) / np.sqrt(dets[good])
    his_part = los + theta[:, None] * gaps
    v = pair_masses_batch(A, h, los, his_part)[good]
    if d == 1:
        sol = v / dets[good, None]
    else:
        try:
            sol = np.linalg.solve(bmats[good], v[..., None])[..., 0]
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(bmats[good], v[..., None], rcond=None)
            sol = sol[..., 0]
    pdf_v = norm * np.exp(-0.5 * np.einsum("mi,mi->m", v, sol))
    adj = as_step(A.apply_adjoint(h))
    pts = (los + theta[:, None] * gaps)[good]
    adj_vals = adj(pts.ravel()).reshape(pts.shape)
    correction = np.einsum("mj,mj->m", -sol * pdf_v[:, None],
                           gaps[good] * adj_vals)
    vals[good] = norm + correction
    return vals


def clark_general_fw_check(A: Operator, k: int, h: PiecewiseConstant,
                           n_mc: int = 10 ** 6, seed: int = 0,
                           shards: int = 1) -> Tuple[MCEstimate, MCEstimate]:
    """Transform-level check of the general-integrator representation.

    lhs: the transform by direct simplex quadrature (``fw_transform_quad``).
    rhs: mean term plus the theta-integrated gradient correction, again by
    simplex MC but on an independent stream (seed + 1), so the two sides
    are independently estimated and their errors combine in quadrature.
    Agreement certifies the representation at the transform level: the
    convolution of the remainder density with the partial density
    reassembles the full-covariance density inside each gradient term.
    """
    from .chaos import fw_transform_quad
    lhs = fw_transform_quad(A, k, h, n_mc=n_mc, seed=seed, shards=shards)

    rhs_seed = seed + 1
    total = 0.0
    total_sq = 0.0
    n_rejected = 0
    n_done = 0
    for shard, size in enumerate(_shard_sizes(n_mc, shards)):
        rng = shard_rng(rhs_seed, shard)
        left = size
        while left > 0:
            m = min(CHUNK, left)
            vals = _general_rhs_chunk(A, k, h, m, rng)
            finite = np.isfinite(vals)
            n_rejected += int(m - finite.sum())
            kept = vals[finite]
            total += float(kept.sum())
            total_sq += float((kept * kept).sum())
            n_done += int(finite.sum())
            left -= m
    if n_done == 0:
        from .errors import IntegrabilityError
        raise IntegrabilityError("all rhs samples were rejected")
    volume = 1.0 / math.factorial(k)
    mean = total / n_done
    var = max(total_sq / n_done - mean * mean, 0.0)
    rhs = MCEstimate(volume * mean, volume * math.sqrt(var / n_done),
                     n_done, rhs_seed, n_rejected)
    return lhs, rhs
