"""Batch experiment runner: config in, JSON summary + CSV detail out.

One experiment per invocation: ``silt <experiment> [--key value]...``.
A flat key=value config file (``--config``) provides the same keys; flags
win.  Every run embeds its seed and a hash of the full configuration in
the summary so results can be reproduced bit-for-bit.
"""

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from .chaos import (fw_transform_mc, fw_transform_mc_extrapolated,
                    fw_transform_quad, second_moment_direct_and_series)
from .clark import (clark_delta_fw_check, clark_delta_l2_residual,
                    clark_general_fw_check, clark_wiener_l2_residual)
from .errors import ConfigError, SiltError
from .functions import Interval, StepFunction, norm_sq, orthonormalize
from .gram import cavalieri_both_sides, indicator_gram_lower_bound
from .local_time import (EpsSchedule, extrapolate_sqrt_eps, mean_T_mult,
                         mean_T_path_mc, mean_T_wiener, moment_smoothed)
from .operators import Identity, Multiplication, parse_operator
from .sampler import PathGrid, bridge_covariance_check
from .simplex import (MCEstimate, REJECTION_THRESHOLD, dyson_closed_form,
                      mc_simplex_integrate)

SCHEMA_VERSION = 1

EXPERIMENTS = ("gram-checks", "dyson", "mean", "moments", "chaos-series",
               "fw", "clark-delta", "clark-wiener", "clark-general")


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    op: str = "identity"
    k: int = 2
    p: int = 1
    eps: tuple = (0.1, 0.05, 0.02)
    n: int = 256
    n_paths: int = 10 ** 4
    n_mc: int = 10 ** 6
    seed: int = 0
    shards: int = 1
    h: str = "const:0"
    s: float = 0.0
    t: float = 1.0
    n_terms: int = 50
    out: str = ""

    def as_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    def config_hash(self) -> str:
        # The hash names the experiment, not the output destination.
        canon = "\n".join(f"{k}={self.as_dict()[k]!r}"
                          for k in sorted(self.as_dict()) if k != "out")
        return hashlib.sha256(canon.encode()).hexdigest()


_INT_KEYS = ("k", "p", "n", "n_paths", "n_mc", "seed", "shards", "n_terms")
_FLOAT_KEYS = ("s", "t")
_STR_KEYS = ("experiment", "op", "h", "out")


def _parse_value(key: str, text: str):
    if key in _INT_KEYS:
        return int(text)
    if key in _FLOAT_KEYS:
        return float(text)
    if key == "eps":
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    if key in _STR_KEYS:
        return text
    raise KeyError(key)


def parse_test_function(text: str) -> StepFunction:
    """Test functions for the transform experiments.

    ``const:<v>`` is the constant v; ``step:v1,v2,...`` takes values on
    equal-width cells.
    """
    kind, _, rest = text.partition(":")
    try:
        if kind == "const":
            return StepFunction(np.array([0.0, 1.0]),
                                np.array([float(rest)]))
        if kind == "step":
            vals = np.array([float(tok) for tok in rest.split(",")])
            if len(vals) == 0:
                raise ValueError("no values")
            return StepFunction(np.linspace(0.0, 1.0, len(vals) + 1), vals)
    except ValueError as exc:
        raise ConfigError(f"bad test function {text!r}: {exc}") from exc
    raise ConfigError(f"unknown test function kind {kind!r} in {text!r}")


def validate_config(raw: str, overrides: dict | None = None
                    ) -> ExperimentConfig:
    """Parse flat key=value text, apply overrides, and range-check."""
    values: dict = {}
    for lineno, line in enumerate(raw.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, text = body.partition("=")
        key, text = key.strip(), text.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        try:
            values[key] = _parse_value(key, text)
        except KeyError:
            raise ConfigError(f"line {lineno}: unknown key {key!r}") from None
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") \
                from None
    for key, text in (overrides or {}).items():
        try:
            values[key] = _parse_value(key, text)
        except KeyError:
            raise ConfigError(f"unknown option {key!r}") from None
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None

    if "seed" not in values and os.environ.get("SILT_SEED"):
        try:
            values["seed"] = int(os.environ["SILT_SEED"])
        except ValueError as exc:
            raise ConfigError(f"bad SILT_SEED: {exc}") from None

    if "experiment" not in values:
        raise ConfigError("experiment name required")
    cfg = ExperimentConfig(**values)
    if not cfg.out:
        cfg = ExperimentConfig(**{**values, "out": cfg.experiment})

    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; "
                          f"choose from {', '.join(EXPERIMENTS)}")
    min_k = 1 if cfg.experiment == "dyson" else 2
    if cfg.k < min_k:
        raise ConfigError(f"k must be >= {min_k} for {cfg.experiment}")
    for name in ("p", "n", "n_paths", "n_mc", "shards", "n_terms"):
        if getattr(cfg, name) <= 0:
            raise ConfigError(f"{name} must be positive")
    try:
        EpsSchedule(cfg.eps)
    except ValueError as exc:
        raise ConfigError(f"eps: {exc}") from None
    parse_operator(cfg.op)
    parse_test_function(cfg.h)
    if not 0.0 <= cfg.s < cfg.t <= 1.0:
        raise ConfigError(f"need 0 <= s < t <= 1, got s={cfg.s}, t={cfg.t}")
    return cfg


# ---------------------------------------------------------------------------
# experiment runners: each returns (results, header, rows, estimates)

def _random_step(rng: np.random.Generator) -> StepFunction:
    inner = np.unique(rng.uniform(0.05, 0.95, size=int(rng.integers(0, 5))))
    bp = np.concatenate([[0.0], inner, [1.0]])
    return StepFunction(bp, rng.uniform(-2.0, 2.0, size=len(bp) - 1))


def _random_intervals(rng: np.random.Generator) -> list[Interval]:
    m = int(rng.integers(1, 6))
    out = []
    for _ in range(m):
        lo = float(rng.uniform(0.0, 0.8))
        out.append(Interval(lo, min(1.0, lo + float(rng.uniform(0.02, 0.5)))))
    return out


def _est_record(e: MCEstimate) -> dict:
    return {"mean": float(e.mean), "stderr": float(e.stderr),
            "n_samples": int(e.n_samples), "seed": int(e.seed),
            "n_rejected": int(e.n_rejected)}


def _run_gram_checks(cfg: ExperimentConfig):
    rng = np.random.default_rng(cfg.seed)
    rows = []
    worst_cav = 0.0
    for case in range(100):
        basis = orthonormalize([_random_step(rng)
                                for _ in range(int(rng.integers(1, 3)))])
        gs = [_random_step(rng) for _ in range(int(rng.integers(1, 4)))]
        lhs, rhs = cavalieri_both_sides(basis, gs)
        # both sides are bounded by the Hadamard product of the g norms, so
        # that product is the right conditioning scale for the comparison
        scale = max(math.prod(norm_sq(g) for g in gs), 1e-30)
        gap = abs(lhs - rhs) / scale
        worst_cav = max(worst_cav, gap)
        rows.append(("cavalieri", case, lhs, rhs, gap))
    worst_margin = math.inf
    violations = 0
    for case in range(1000):
        det, bound = indicator_gram_lower_bound(_random_intervals(rng))
        slack = det - bound
        worst_margin = min(worst_margin, slack)
        violations += slack < -1e-12
        if case < 100:
            rows.append(("gram-bound", case, det, bound, slack))
    worst_bridge = 0.0
    for knots in ((), (0.5,), (0.25, 0.5, 0.75)):
        cov_a, cov_b = bridge_covariance_check(knots, n=128)
        gap = float(np.max(np.abs(cov_a - cov_b)))
        worst_bridge = max(worst_bridge, gap)
        rows.append(("bridge-cov", len(knots), gap, 0.0, gap))
    results = {"cavalieri_worst_rel_gap": worst_cav,
               "gram_bound_violations": violations,
               "gram_bound_worst_slack": worst_margin,
               "bridge_cov_worst_gap": worst_bridge}
    return results, ["check", "case", "lhs", "rhs", "gap"], rows, []


def _dyson_integrand(ts: np.ndarray) -> np.ndarray:
    gaps = np.diff(ts, axis=1)
    if gaps.shape[1] == 0:
        return np.ones(len(ts))
    with np.errstate(divide="ignore"):
        return 1.0 / np.sqrt(np.prod(gaps, axis=1))


def _run_dyson(cfg: ExperimentConfig):
    est = mc_simplex_integrate(_dyson_integrand, cfg.k, 0.0, 1.0,
                               cfg.n_mc, cfg.seed, cfg.shards)
    closed = dyson_closed_form(cfg.k)
    rel = abs(est.mean - closed) / closed
    results = {"k": cfg.k, "closed_form": closed,
               "estimate": _est_record(est), "rel_error": rel}
    rows = [(cfg.k, closed, est.mean, est.stderr, rel)]
    return results, ["k", "closed_form", "estimate", "stderr",
                     "rel_error"], rows, [est]


def _run_mean(cfg: ExperimentConfig):
    A = parse_operator(cfg.op)
    ests = mean_T_path_mc(A, cfg.k, list(cfg.eps), PathGrid(cfg.n),
                          cfg.n_paths, cfg.seed)
    results = {"per_eps": [_est_record(e) for e in ests]}
    if len(cfg.eps) >= 2:
        value, stderr = extrapolate_sqrt_eps(list(cfg.eps),
                                             [e.mean for e in ests],
                                             [e.stderr for e in ests])
        results["extrapolated"] = {"mean": value, "stderr": stderr}
    if isinstance(A, Identity):
        results["closed_form"] = mean_T_wiener(cfg.k)
    elif isinstance(A, Multiplication):
        quad = mean_T_mult(A.phi, cfg.k, cfg.n_mc, cfg.seed, cfg.shards)
        results["quad"] = _est_record(quad)
    rows = [(eps, e.mean, e.stderr) for eps, e in zip(cfg.eps, ests)]
    return results, ["epsilon", "mean", "stderr"], rows, list(ests)


def _run_moments(cfg: ExperimentConfig):
    A = parse_operator(cfg.op)
    rows = []
    ests = []
    for eps in cfg.eps:
        est = moment_smoothed(A, cfg.k, cfg.p, eps, cfg.n_mc, cfg.seed,
                              cfg.shards)
        ests.append(est)
        rows.append((eps, est.mean, est.stderr, est.rejected_fraction))
    results = {"p": cfg.p, "per_eps": [_est_record(e) for e in ests]}
    if len(cfg.eps) >= 2:
        value, stderr = extrapolate_sqrt_eps(list(cfg.eps),
                                             [e.mean for e in ests],
                                             [e.stderr for e in ests])
        results["extrapolated"] = {"mean": value, "stderr": stderr}
    return results, ["epsilon", "moment", "stderr",
                     "rejected_fraction"], rows, ests


def _run_chaos_series(cfg: ExperimentConfig):
    direct, report = second_moment_direct_and_series(
        cfg.k, cfg.n_terms, cfg.n_mc, cfg.seed, cfg.shards)
    cums = report.cumulative()
    gap = abs(direct.mean - cums[-1]) / max(abs(direct.mean), 1e-30)
    results = {"direct": _est_record(direct),
               "series_total": float(cums[-1]),
               "rel_gap": float(gap),
               "tail_max": float(max(t for _, t in report.tail))}
    rows = [(n, term, cum, tail) for (n, term, cum), (_, tail)
            in zip(report.terms, report.tail)]
    return results, ["n", "term", "cumsum", "tail_diagnostic"], rows, [direct]


def _run_fw(cfg: ExperimentConfig):
    A = parse_operator(cfg.op)
    h = parse_test_function(cfg.h)
    quad = fw_transform_quad(A, cfg.k, h, cfg.n_mc, cfg.seed, cfg.shards)
    grid = PathGrid(cfg.n)
    mc = fw_transform_mc_extrapolated(A, cfg.k, h, list(cfg.eps),
                                      cfg.n_paths, grid, cfg.seed)
    sigma = math.hypot(quad.stderr, mc.stderr)
    z = abs(quad.mean - mc.mean) / sigma if sigma > 0 else math.inf
    rows = []
    ests = [quad, mc]
    for eps in cfg.eps:
        e = fw_transform_mc(A, cfg.k, h, eps, cfg.n_paths, grid, cfg.seed)
        ests.append(e)
        rows.append((eps, e.mean, e.stderr))
    results = {"quad": _est_record(quad), "path_extrapolated": _est_record(mc),
               "z_score": z}
    return results, ["epsilon", "mean", "stderr"], rows, ests


def _run_clark_delta(cfg: ExperimentConfig):
    h = parse_test_function(cfg.h)
    lhs, rhs = clark_delta_fw_check(h, cfg.s, cfg.t)
    rows = []
    ests = []
    for eps in cfg.eps:
        est = clark_delta_l2_residual(cfg.s, cfg.t, eps, PathGrid(cfg.n),
                                      cfg.n_paths, cfg.seed)
        ests.append(est)
        rows.append((eps, cfg.n, est.mean, est.stderr))
    results = {"transform_lhs": lhs, "transform_rhs": rhs,
               "transform_gap": abs(lhs - rhs),
               "residuals": [_est_record(e) for e in ests]}
    return results, ["epsilon", "grid_n", "residual", "stderr"], rows, ests


def _run_clark_wiener(cfg: ExperimentConfig):
    grid = PathGrid(cfg.n)
    res = clark_wiener_l2_residual(2, list(cfg.eps), grid, cfg.n_paths,
                                   cfg.seed)
    abl = clark_wiener_l2_residual(2, list(cfg.eps), grid, cfg.n_paths,
                                   cfg.seed, use_beta=False)
    rows = [(eps, cfg.n, r.mean, r.stderr)
            for eps, r in zip(cfg.eps, res)]
    results = {"residuals": [_est_record(e) for e in res],
               "ablation": [_est_record(e) for e in abl],
               "explained_fraction": [1.0 - r.mean / a.mean
                                      for r, a in zip(res, abl)]}
    return results, ["epsilon", "grid_n", "residual", "stderr"], rows, \
        list(res) + list(abl)


def _run_clark_general(cfg: ExperimentConfig):
    A = parse_operator(cfg.op)
    h = parse_test_function(cfg.h)
    lhs, rhs = clark_general_fw_check(A, cfg.k, h, cfg.n_mc, cfg.seed,
                                      cfg.shards)
    sigma = math.hypot(lhs.stderr, rhs.stderr)
    z = abs(lhs.mean - rhs.mean) / sigma if sigma > 0 else math.inf
    results = {"lhs": _est_record(lhs), "rhs": _est_record(rhs), "z_score": z}
    rows = [(lhs.mean, lhs.stderr, rhs.mean, rhs.stderr, z)]
    return results, ["lhs", "lhs_stderr", "rhs", "rhs_stderr",
                     "z_score"], rows, [lhs, rhs]


_RUNNERS = {
    "gram-checks": _run_gram_checks,
    "dyson": _run_dyson,
    "mean": _run_mean,
    "moments": _run_moments,
    "chaos-series": _run_chaos_series,
    "fw": _run_fw,
    "clark-delta": _run_clark_delta,
    "clark-wiener": _run_clark_wiener,
    "clark-general": _run_clark_general,
}


# ---------------------------------------------------------------------------
# driver

def _write_outputs(cfg: ExperimentConfig, results: dict, header, rows,
                   escalated: bool) -> None:
    summary = {
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg.experiment,
        "config": cfg.as_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "rejection_escalated": escalated,
        "results": results,
    }
    with open(f"{cfg.out}.summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(f"{cfg.out}.detail.csv", "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def run(cfg: ExperimentConfig) -> int:
    """Execute one experiment; 0 on success, 1 on escalation or math error."""
    try:
        results, header, rows, estimates = _RUNNERS[cfg.experiment](cfg)
    except SiltError as exc:
        print(f"silt: {exc}", file=sys.stderr)
        return 1
    escalated = any(e.rejected_fraction > REJECTION_THRESHOLD
                    for e in estimates)
    _write_outputs(cfg, results, header, rows, escalated)
    if escalated:
        print("silt: rejection fraction above threshold, see summary",
              file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="silt", description="run one numerical experiment")
    parser.add_argument("experiment", nargs="?", default=None,
                        help="|".join(EXPERIMENTS))
    parser.add_argument("--config", help="flat key=value config file")
    for key in ("op", "k", "p", "eps", "n", "n-paths", "n-mc", "seed",
                "shards", "h", "s", "t", "n-terms", "out"):
        parser.add_argument(f"--{key}")
    args = parser.parse_args(argv)

    raw = ""
    if args.config:
        try:
            with open(args.config) as fh:
                raw = fh.read()
        except OSError as exc:
            print(f"silt: cannot read config: {exc}", file=sys.stderr)
            return 2
    overrides = {}
    if args.experiment is not None:
        overrides["experiment"] = args.experiment
    for key in ("op", "k", "p", "eps", "n", "n_paths", "n_mc", "seed",
                "shards", "h", "s", "t", "n_terms", "out"):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = val
    try:
        cfg = validate_config(raw, overrides)
    except ConfigError as exc:
        print(f"silt: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
