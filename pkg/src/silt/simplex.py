"""Ordered-tuple (simplex) integration: Monte Carlo and closed forms.

The ordered simplex D_k(a,b) = {a <= t_1 <= ... <= t_k <= b} carries every
time integral in the package.  Uniform samples come from sorting iid
uniforms; the integral estimate is volume * sample mean with
volume = (b-a)^k / k!.

The closed form for the power-singularity integral

    ∫_{D_k(a,b)} prod_{i<k} (t_{i+1}-t_i)^{-1/2} dt
        = pi^{(k-1)/2} (b-a)^{(k+1)/2} / Gamma((k+3)/2)

is the main deterministic oracle; the recursion behind it convolves
H_k(t) = pi^{k/2} (t-a)^{k/2} / Gamma((k+2)/2) against (t-u)^{-1/2}.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import IntegrabilityError, ToleranceError

__all__ = [
    "SimplexTuple",
    "MCEstimate",
    "sample_simplex",
    "sample_simplex_batch",
    "shard_rng",
    "mc_simplex_integrate",
    "dyson_closed_form",
    "h_closed_form",
    "h_recursion_check",
    "REJECTION_THRESHOLD",
]

#: fraction of rejected (non-finite) samples above which we warn
REJECTION_THRESHOLD = 0.01

#: fixed Monte Carlo chunk size — part of the reproducibility contract,
#: results must not depend on available memory
CHUNK = 1 << 16


@dataclass(frozen=True)
class SimplexTuple:
    """One ordered tuple a <= t_1 <= ... <= t_k <= b."""

    times: tuple
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        ts = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", ts)
        if any(t2 < t1 for t1, t2 in zip(ts, ts[1:])):
            raise ValueError("times must be nondecreasing")
        if ts and not (self.a <= ts[0] and ts[-1] <= self.b):
            raise ValueError("times must lie in [a, b]")

    @property
    def k(self) -> int:
        return len(self.times)

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(np.asarray(self.times))


@dataclass(frozen=True)
class MCEstimate:
    """Monte Carlo estimate with its standard error and provenance."""

    mean: float
    stderr: float
    n_samples: int
    seed: int
    n_rejected: int = 0

    def __post_init__(self):
        if self.stderr < 0.0:
            raise ValueError("stderr must be nonnegative")
        if self.n_samples < 1:
            raise ValueError("need at least one sample")

    @property
    def rejected_fraction(self) -> float:
        return self.n_rejected / self.n_samples if self.n_samples else 0.0


def sample_simplex(k: int, a: float, b: float,
                   rng: np.random.Generator) -> SimplexTuple:
    """One uniform draw from D_k(a,b) (sorted iid uniforms)."""
    u = np.sort(rng.uniform(a, b, size=k))
    return SimplexTuple(tuple(u), a, b)


def sample_simplex_batch(k: int, a: float, b: float, m: int,
                         rng: np.random.Generator,
                         stratify: bool = False,
                         copies: int = 1) -> np.ndarray:
    """(m, k) array of uniform ordered tuples ((m, copies, k) if copies > 1).

    With ``stratify=True`` the first pre-sort coordinate is stratified into
    m equal slices — still an unbiased sampler of the uniform law on the
    simplex, since sorting is applied afterwards.  ``copies`` draws several
    independent tuples per sample, for integrals over products of
    simplices.
    """
    if stratify and copies != 1:
        raise ValueError("stratification is defined for single-copy sampling")
    shape = (m, k) if copies == 1 else (m, copies, k)
    u = rng.uniform(0.0, 1.0, size=shape)
    if stratify:
        u[:, 0] = (np.arange(m) + u[:, 0]) / m
    u = a + (b - a) * u
    u.sort(axis=-1)
    return u


def _shard_sizes(n: int, shards: int) -> list[int]:
    base, extra = divmod(n, shards)
    return [base + (1 if s < extra else 0) for s in range(shards)]


def shard_rng(seed: int, shard: int) -> np.random.Generator:
    """Counter-based stream for one shard, keyed by (seed, shard index)."""
    return np.random.Generator(np.random.Philox(key=[seed, shard]))


def mc_simplex_integrate(f: Callable[[np.ndarray], np.ndarray], k: int,
                         a: float = 0.0, b: float = 1.0, n: int = 10 ** 6,
                         seed: int = 0, shards: int = 1,
                         stratify: bool = False, copies: int = 1) -> MCEstimate:
    """Monte Carlo estimate of ∫_{D_k(a,b)} f(t) dt.

    ``f`` maps an (m, k) array of ordered tuples to an (m,) array of
    integrand values.  Non-finite values mark integrable-singularity hits;
    those samples are rejected and counted, and a rejection fraction above
    REJECTION_THRESHOLD triggers an IntegrabilityError-grade warning.

    Sampling is split into ``shards`` independent streams keyed by
    (seed, shard index) and merged by pooled mean/variance, so the result
    is identical for a fixed (seed, shards) regardless of scheduling.

    ``copies > 1`` integrates over the product of that many simplices; the
    integrand then receives (m, copies, k) arrays.
    """
    if k < 1:
        raise ValueError("need k >= 1")
    volume = ((b - a) ** k / math.factorial(k)) ** copies
    tot_n = 0            # accepted samples
    tot_mean = 0.0
    tot_m2 = 0.0
    tot_rej = 0
    for shard, size in enumerate(_shard_sizes(n, shards)):
        rng = shard_rng(seed, shard)
        done = 0
        while done < size:
            m = min(CHUNK, size - done)
            vals = np.asarray(f(sample_simplex_batch(k, a, b, m, rng,
                                                     stratify=stratify,
                                                     copies=copies)),
                              dtype=float)
            good = vals[np.isfinite(vals)]
            tot_rej += m - len(good)
            done += m
            if len(good) == 0:
                continue
            # Chan et al. pooled update
            c_n, c_mean = len(good), float(good.mean())
            c_m2 = float(((good - c_mean) ** 2).sum())
            delta = c_mean - tot_mean
            new_n = tot_n + c_n
            tot_m2 += c_m2 + delta ** 2 * tot_n * c_n / new_n
            tot_mean += delta * c_n / new_n
            tot_n = new_n
    if tot_n == 0:
        raise IntegrabilityError("every sample was rejected",
                                 rejected_fraction=1.0)
    var = tot_m2 / (tot_n - 1) if tot_n > 1 else 0.0
    est = MCEstimate(mean=volume * tot_mean,
                     stderr=volume * math.sqrt(var / tot_n),
                     n_samples=n, seed=seed, n_rejected=tot_rej)
    if est.rejected_fraction > REJECTION_THRESHOLD:
        warnings.warn(
            f"rejection fraction {est.rejected_fraction:.2%} exceeds "
            f"{REJECTION_THRESHOLD:.0%}: integrand may not be integrable",
            RuntimeWarning, stacklevel=2)
    return est


def dyson_closed_form(k: int, a: float = 0.0, b: float = 1.0) -> float:
    """∫_{D_k(a,b)} prod (t_{i+1}-t_i)^{-1/2} dt in closed form."""
    if k < 1:
        raise ValueError("need k >= 1")
    return math.pi ** ((k - 1) / 2.0) * (b - a) ** ((k + 1) / 2.0) \
        / math.gamma((k + 3) / 2.0)


def h_closed_form(k: int, t: float, a: float = 0.0) -> float:
    """H_k(t) = pi^{k/2} (t-a)^{k/2} / Gamma((k+2)/2)."""
    if t < a:
        raise ValueError("need t >= a")
    return math.pi ** (k / 2.0) * (t - a) ** (k / 2.0) \
        / math.gamma((k + 2) / 2.0)


def h_recursion_check(k: int, t: float, a: float = 0.0,
                      tol: float = 1e-10) -> tuple[float, float]:
    """(closed, recursed) where recursed = ∫_a^t H_{k-1}(u) (t-u)^{-1/2} du.

    The quadrature treats the endpoint singularity via the algebraic-weight
    rule; failure to converge raises ToleranceError.
    """
    if k < 1:
        raise ValueError("recursion starts at k = 1")
    closed = h_closed_form(k, t, a)
    if t == a:
        return closed, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            # weight (t-u)^{-1/2} at the right endpoint
            val, err = integrate.quad(
                lambda u: h_closed_form(k - 1, u, a), a, t,
                weight="alg", wvar=(0.0, -0.5), epsabs=tol, epsrel=tol)
        except integrate.IntegrationWarning as exc:
            raise ToleranceError(f"quadrature did not converge: {exc}")
    if err > max(tol, 1e-8 * abs(val)):
        raise ToleranceError(f"quadrature error {err:.2e} too large")
    return closed, val
