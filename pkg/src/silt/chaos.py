"""Chaos-level machinery for the intersection functionals.

Two independent routes to the transform 𝒯(T)(h) — determinant/projection
quadrature over the simplex, and path simulation against the exponential
martingale — plus the multiplication-operator kernels, the Wiener
second-moment series with its overlap kernel, and the exact combinatorial
ratio bound used by the series tail analysis.
"""

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import IntegrabilityError, ToleranceError
from .functions import PiecewiseConstant, indicator, Interval
from .gram import gram_det, projection_norm_sq
from .local_time import (estimate_T_eps_batch, mean_T_wiener,
                         path_batch_size, sqrt_eps_weights)
from .operators import (Identity, Multiplication, Operator,
                        increment_gram_batch, pair_masses_batch)
from .sampler import (PathGrid, pairing_coefficients, path_coefficients,
                      sample_joint_batch)
from .simplex import (CHUNK, REJECTION_THRESHOLD, MCEstimate, SimplexTuple,
                      mc_simplex_integrate, sample_simplex_batch, shard_rng,
                      _shard_sizes)

__all__ = [
    "ChaosSeriesReport", "fw_integrand_batch", "fw_integrand_reference",
    "fw_transform_quad", "fw_transform_mc", "fw_transform_mc_extrapolated",
    "kernel_b2n", "overlap_kernel", "overlap_kernel_batch",
    "second_moment_series", "second_moment_direct_and_series",
    "stirling_ratio_check",
]


# ---------------------------------------------------------------------------
# transform by quadrature

def fw_integrand_batch(A: Operator, h: PiecewiseConstant,
                       ts: np.ndarray) -> np.ndarray:
    """Transform integrand exp(-||P h||^2/2) / ((2pi)^{d/2} sqrt(G)).

    ``ts`` is an (m, k) array of ordered tuples; d = k - 1.  P projects
    onto the span of the operator images of the cell indicators, so
    ||P h||^2 = v' B^{-1} v with B the increment Gram matrix and
    v_i = (A 1_{cell_i}, h).  Degenerate samples (G <= 0) come out +inf
    and are rejected by the MC driver.
    """
    los, his = ts[:, :-1], ts[:, 1:]
    b = increment_gram_batch(A, los, his)
    v = pair_masses_batch(A, h, los, his)
    m, d = v.shape
    if d == 1:
        dets = b[:, 0, 0].copy()
        with np.errstate(divide="ignore", invalid="ignore"):
            q = v[:, 0] ** 2 / dets
    else:
        dets = np.linalg.det(b)
        q = np.full(m, np.nan)
        good = dets > 0.0
        if good.any():
            try:
                sol = np.linalg.solve(b[good], v[good][..., None])[..., 0]
                q[good] = np.einsum("md,md->m", v[good], sol)
            except np.linalg.LinAlgError:
                for i in np.flatnonzero(good):
                    sol_i, *_ = np.linalg.lstsq(b[i], v[i], rcond=None)
                    q[i] = float(v[i] @ sol_i)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = ((2.0 * math.pi) ** (-d / 2.0)
                * np.exp(-0.5 * q) / np.sqrt(dets))
    vals[~(dets > 0.0)] = np.inf
    return vals


def fw_integrand_reference(A: Operator, h: PiecewiseConstant,
                           t: Sequence[float]) -> float:
    """Same integrand at a single tuple, via the Gram-module primitives.

    Kept deliberately independent of the batched route (projection by
    normal equations on explicitly constructed functions) so the two code
    paths can certify each other in tests.
    """
    t = [float(u) for u in t]
    fs = [A.apply(indicator(Interval(a, b))) for a, b in zip(t, t[1:])]
    g = gram_det(fs)
    if g <= 0.0:
        return math.inf
    d = len(fs)
    pns = projection_norm_sq(fs, h)
    return math.exp(-0.5 * pns) / ((2.0 * math.pi) ** (d / 2.0) * math.sqrt(g))


def fw_transform_quad(A: Operator, k: int, h: PiecewiseConstant,
                      n_mc: int = 10 ** 6, seed: int = 0,
                      shards: int = 1) -> MCEstimate:
    """Transform value at h by simplex MC of the determinant integrand.

    At h = 0 the exponential factor is 1 and this reduces to the mean of
    the intersection functional; for any h the value is dominated by that
    mean.
    """
    if k < 2:
        raise ValueError("need k >= 2")
    return mc_simplex_integrate(lambda ts: fw_integrand_batch(A, h, ts),
                                k, 0.0, 1.0, n_mc, seed, shards)


# ---------------------------------------------------------------------------
# transform by path simulation

def _fw_mc_chunks(A: Operator, k: int, h: PiecewiseConstant,
                  eps_list: Sequence[float], n_paths: int,
                  grid: PathGrid, seed: int):
    """Yield (n_eps, batch) arrays of per-path samples T_hat * martingale.

    The martingale factor exp((h, xi) - ||h||^2/2) uses the grid norm of h,
    so its expectation is exactly 1 in the discretized model.
    """
    coeffs = path_coefficients(A, grid)
    c = pairing_coefficients(h, grid)
    half = 0.5 * float(c @ c)
    batch = path_batch_size(grid.n)
    done = 0
    while done < n_paths:
        b = min(batch, n_paths - done)
        z, x = sample_joint_batch(A, grid, b, seed, start=done, coeffs=coeffs)
        t_hat = estimate_T_eps_batch(x, k, eps_list)
        yield t_hat * np.exp(z @ c - half)
        done += b


def fw_transform_mc(A: Operator, k: int, h: PiecewiseConstant, eps: float,
                    n_paths: int = 10 ** 4, grid: Optional[PathGrid] = None,
                    seed: int = 0) -> MCEstimate:
    """Path-MC estimate of E[T_eps * exp((h, xi) - ||h||^2/2)].

    Estimates the transform of the smoothed functional; as eps decreases
    the values approach the quadrature route's limit.
    """
    if eps <= 0:
        raise ValueError("need eps > 0")
    grid = grid if grid is not None else PathGrid()
    s = 0.0
    q = 0.0
    for chunk in _fw_mc_chunks(A, k, h, [eps], n_paths, grid, seed):
        s += chunk.sum()
        q += float(chunk[0] @ chunk[0])
    mean = s / n_paths
    var = max((q - n_paths * mean ** 2) / (n_paths - 1), 0.0)
    return MCEstimate(mean=float(mean), stderr=math.sqrt(var / n_paths),
                      n_samples=n_paths, seed=seed)


def fw_transform_mc_extrapolated(A: Operator, k: int, h: PiecewiseConstant,
                                 eps_schedule: Sequence[float],
                                 n_paths: int = 10 ** 4,
                                 grid: Optional[PathGrid] = None,
                                 seed: int = 0) -> MCEstimate:
    """Smoothing-free transform estimate: extrapolate shared-path MC values.

    All schedule points are evaluated on the same paths and combined
    per path with the sqrt-eps extrapolation weights, so the reported
    stderr reflects the (strong) cross-schedule covariance instead of
    assuming independence.
    """
    grid = grid if grid is not None else PathGrid()
    w = sqrt_eps_weights(eps_schedule)
    s = 0.0
    q = 0.0
    for chunk in _fw_mc_chunks(A, k, h, list(eps_schedule), n_paths,
                               grid, seed):
        y = w @ chunk
        s += y.sum()
        q += float(y @ y)
    mean = s / n_paths
    var = max((q - n_paths * mean ** 2) / (n_paths - 1), 0.0)
    return MCEstimate(mean=float(mean), stderr=math.sqrt(var / n_paths),
                      n_samples=n_paths, seed=seed)


# ---------------------------------------------------------------------------
# multiplication-operator kernels

def kernel_b2n(phi: PiecewiseConstant, k: int, n: int, s: Sequence[float],
               n_mc: int = 10 ** 5, seed: int = 0,
               shards: int = 1) -> MCEstimate:
    """Pointwise kernel value at an ordered 2n-tuple s.

    The integrand over the order-k simplex is the inverse square root of
    the product of cell masses of phi^2, times one factor per coordinate
    pair: the sum over cells containing both entries of the pair, weighted
    by the inverse cell mass.  With n = 0 the pair product is empty and the
    value reduces to the mean integrand.  A pair straddling every cell
    boundary contributes a zero factor.
    """
    op = Multiplication(phi)        # validates the lower bound on |phi|
    s = np.asarray(s, dtype=float)
    if s.shape != (2 * n,):
        raise ValueError(f"need an ordered tuple of length {2 * n}")
    if n > 0 and (np.any(np.diff(s) < 0) or s[0] < 0.0 or s[-1] > 1.0):
        raise ValueError("tuple must be ordered within [0, 1]")
    pair_lo, pair_hi = s[0::2], s[1::2]

    def f(ts: np.ndarray) -> np.ndarray:
        los, his = ts[:, :-1], ts[:, 1:]
        masses = pair_masses_batch(op, phi, los, his)
        prod = np.prod(masses, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = 1.0 / np.sqrt(prod)
            inv_mass = np.where(masses > 0.0, 1.0 / np.where(masses > 0.0,
                                                             masses, 1.0), 0.0)
        for lo, hi in zip(pair_lo, pair_hi):
            inside = (los <= lo) & (hi <= his)
            vals *= (inv_mass * inside).sum(axis=1)
        vals[~(prod > 0.0)] = np.inf
        return vals

    return mc_simplex_integrate(f, k, 0.0, 1.0, n_mc, seed, shards)


# ---------------------------------------------------------------------------
# second-moment series

def overlap_kernel_batch(t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
    """Bracket values for two (m, k) arrays of ordered tuples.

    For each sample: sum over cell pairs of the squared overlap length
    divided by the two cell lengths.  Zero-length cells contribute 0.
    """
    lo1, hi1 = t1[:, :-1, None], t1[:, 1:, None]
    lo2, hi2 = t2[:, None, :-1], t2[:, None, 1:]
    ov = np.clip(np.minimum(hi1, hi2) - np.maximum(lo1, lo2), 0.0, None)
    den = (hi1 - lo1) * (hi2 - lo2)
    ratio = np.where(den > 0.0, ov * ov / np.where(den > 0.0, den, 1.0), 0.0)
    return ratio.sum(axis=(1, 2))


def overlap_kernel(t1, t2) -> float:
    """Scalar overlap bracket of two order-k tuples; lies in [0, k-1]."""
    a = np.asarray(t1.times if isinstance(t1, SimplexTuple) else t1, float)
    b = np.asarray(t2.times if isinstance(t2, SimplexTuple) else t2, float)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("need two ordered tuples of the same order k >= 2")
    return float(overlap_kernel_batch(a[None, :], b[None, :])[0])


def _series_ratios(n_terms: int) -> np.ndarray:
    """Combinatorial ratios r_n = (2n)! / (n! 2^n)^2 for n = 1 .. n_terms."""
    r = np.empty(n_terms)
    acc = 1.0
    for i in range(1, n_terms + 1):
        acc *= (2 * i - 1) / (2 * i)
        r[i - 1] = acc
    return r


@dataclass(frozen=True)
class ChaosSeriesReport:
    """Term-by-term view of the second-moment series.

    ``terms`` holds (n, term, cumulative) with n = 0 the exact squared
    mean; ``stderrs`` the per-term MC stderr (0.0 for the exact term);
    ``tail`` the (n, n^{5/2} * term) diagnostics for n >= 1.
    """

    k: int
    terms: tuple
    stderrs: tuple
    tail: tuple
    n_samples: int
    seed: int

    def __post_init__(self):
        vals = [t for _, t, _ in self.terms]
        cums = [c for _, _, c in self.terms]
        if any(v < 0 for v in vals):
            raise ValueError("series terms must be nonnegative")
        if any(b < a for a, b in zip(cums, cums[1:])):
            raise ValueError("cumulative sums must be nondecreasing")

    def term_values(self) -> np.ndarray:
        return np.array([t for _, t, _ in self.terms])

    def cumulative(self) -> np.ndarray:
        return np.array([c for _, _, c in self.terms])

    def to_csv(self, path: str) -> None:
        diag = {n: d for n, d in self.tail}
        with open(path, "w") as fh:
            fh.write("n,term,cumsum,tail_diagnostic\n")
            for n, term, cum in self.terms:
                fh.write(f"{n},{term!r},{cum!r},{diag.get(n, 0.0)!r}\n")


def _second_moment_mc(k: int, n_terms: int, n_mc: int, seed: int,
                      shards: int, want_direct: bool):
    """Shared-sample MC sweep over pairs of order-k tuples.

    Accumulates, for the same accepted samples, the per-term integrand
    means u * o^n (u the inverse root of the product of all cell lengths,
    o the overlap bracket) and optionally the direct integrand built from
    the joint increment Gram determinant of the concatenated families.
    """
    d = k - 1
    sums = np.zeros(n_terms)
    sumsqs = np.zeros(n_terms)
    dir_sum = 0.0
    dir_sumsq = 0.0
    accepted = 0
    rejected = 0
    ident = Identity()
    for shard, size in enumerate(_shard_sizes(n_mc, shards)):
        rng = shard_rng(seed, shard)
        done = 0
        while done < size:
            m = min(CHUNK, size - done)
            done += m
            ts = sample_simplex_batch(k, 0.0, 1.0, m, rng, copies=2)
            t1, t2 = ts[:, 0, :], ts[:, 1, :]
            prod = np.prod(np.diff(t1, axis=1), axis=1) \
                * np.prod(np.diff(t2, axis=1), axis=1)
            good = prod > 0.0
            if want_direct:
                los = np.concatenate([t1[:, :-1], t2[:, :-1]], axis=1)
                his = np.concatenate([t1[:, 1:], t2[:, 1:]], axis=1)
                dets = np.linalg.det(increment_gram_batch(ident, los, his))
                good &= dets > 0.0
                w_dir = (2.0 * math.pi) ** (-d) / np.sqrt(dets[good])
                dir_sum += w_dir.sum()
                dir_sumsq += float(w_dir @ w_dir)
            u = 1.0 / np.sqrt(prod[good])
            o = overlap_kernel_batch(t1[good], t2[good])
            opow = np.ones_like(u)
            for i in range(n_terms):
                opow = opow * o
                v = u * opow
                sums[i] += v.sum()
                sumsqs[i] += float(v @ v)
            accepted += int(good.sum())
            rejected += m - int(good.sum())
    if accepted == 0:
        raise IntegrabilityError("every simplex-pair sample was rejected",
                                 rejected_fraction=1.0)
    if rejected / n_mc > REJECTION_THRESHOLD:
        warnings.warn(f"rejection fraction {rejected / n_mc:.2%} exceeds "
                      f"{REJECTION_THRESHOLD:.0%}", RuntimeWarning,
                      stacklevel=3)
    vol = (1.0 / math.factorial(k)) ** 2
    means = sums / accepted
    varis = np.maximum(sumsqs - accepted * means ** 2, 0.0) / max(accepted - 1, 1)
    term_means = vol * means
    term_ses = vol * np.sqrt(varis / accepted)
    direct = None
    if want_direct:
        dmean = dir_sum / accepted
        dvar = max(dir_sumsq - accepted * dmean ** 2, 0.0) / max(accepted - 1, 1)
        direct = MCEstimate(mean=vol * dmean,
                            stderr=vol * math.sqrt(dvar / accepted),
                            n_samples=n_mc, seed=seed, n_rejected=rejected)
    return term_means, term_ses, direct, rejected


def _series_report(k: int, n_terms: int, n_mc: int, seed: int,
                   term_means: np.ndarray, term_ses: np.ndarray
                   ) -> ChaosSeriesReport:
    coefs = _series_ratios(n_terms) / (2.0 * math.pi) ** (k - 1)
    vals = np.concatenate([[mean_T_wiener(k) ** 2], coefs * term_means])
    ses = np.concatenate([[0.0], coefs * term_ses])
    cums = np.cumsum(vals)
    terms = tuple((n, float(vals[n]), float(cums[n]))
                  for n in range(n_terms + 1))
    tail = tuple((n, float(n ** 2.5 * vals[n])) for n in range(1, n_terms + 1))
    return ChaosSeriesReport(k=k, terms=terms, stderrs=tuple(float(s) for s in ses),
                             tail=tail, n_samples=n_mc, seed=seed)


def second_moment_series(k: int, n_terms: int = 50, n_mc: int = 10 ** 6,
                         seed: int = 0, shards: int = 1) -> ChaosSeriesReport:
    """Second-moment series for the order-k Wiener functional.

    Term 0 is the exact squared mean; term n carries the combinatorial
    ratio over (2 pi)^{k-1} times the simplex-pair integral of the n-th
    overlap power.  All terms share one sample stream, so cumulative sums
    are smooth in n and directly comparable.
    """
    if k < 2 or n_terms < 1:
        raise ValueError("need k >= 2 and n_terms >= 1")
    term_means, term_ses, _, _ = _second_moment_mc(k, n_terms, n_mc, seed,
                                                   shards, want_direct=False)
    return _series_report(k, n_terms, n_mc, seed, term_means, term_ses)


def second_moment_direct_and_series(k: int, n_terms: int = 50,
                                    n_mc: int = 10 ** 6, seed: int = 0,
                                    shards: int = 1):
    """Direct joint-Gram quadrature of E[T^2] and the series, shared samples.

    Per accepted sample the direct integrand equals the full sum of the
    series integrands, so the difference of the two results is the
    truncation tail plus no extra MC noise.
    """
    if k < 2 or n_terms < 1:
        raise ValueError("need k >= 2 and n_terms >= 1")
    term_means, term_ses, direct, _ = _second_moment_mc(
        k, n_terms, n_mc, seed, shards, want_direct=True)
    report = _series_report(k, n_terms, n_mc, seed, term_means, term_ses)
    return direct, report


# ---------------------------------------------------------------------------
# combinatorial tail bound

def stirling_ratio_check(n_max: int):
    """Exact ratios (2n)!/(n! 2^n)^2 with the n^{-1/2} bound verified.

    Uses the recurrence r_{n+1} = r_n (2n+1)/(2n+2) over exact rationals,
    so there is no factorial overflow and the bound check r_n^2 n <= 1 is
    exact arithmetic.
    """
    if n_max < 1:
        raise ValueError("need n_max >= 1")
    out = []
    r = Fraction(1)
    for n in range(1, n_max + 1):
        r *= Fraction(2 * n - 1, 2 * n)
        if r * r * n > 1:
            raise ToleranceError(f"combinatorial ratio bound fails at n={n}")
        out.append((n, r))
    return out
