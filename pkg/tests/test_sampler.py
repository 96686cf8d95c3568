import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from silt.errors import ResolutionError
from silt.functions import GridFunction, Interval, StepFunction, indicator
from silt.operators import (Identity, Multiplication, ProjectionComplement,
                            increment_gram)
from silt.sampler import (JointSample, PathGrid, bridge_covariance_check,
                          export_paths_csv, ito_sum, ito_sum_batch, pairing,
                          pairing_batch, path_coefficients, path_stream,
                          sample_joint, sample_joint_batch)


def const(c):
    return StepFunction(np.array([0.0, 1.0]), np.array([float(c)]))


def bridge():
    return ProjectionComplement.from_partition(())


def test_path_grid_validation():
    g = PathGrid(4)
    assert_allclose(g.times, [0.0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(ValueError):
        PathGrid(0)


def test_wiener_increments_are_scaled_coordinates():
    # x(t_{j+1}) - x(t_j) = z_j / sqrt(n) exactly for the identity operator
    grid = PathGrid(32)
    s = sample_joint(Identity(), grid, np.random.default_rng(0))
    assert s.x[0] == 0.0
    assert_allclose(np.diff(s.x), s.z / math.sqrt(32), atol=1e-14)


def test_wiener_terminal_variance():
    _, xs = sample_joint_batch(Identity(), PathGrid(16), 20000, seed=1)
    v = xs[:, -1].var()
    assert abs(v - 1.0) < 0.03


def test_bridge_terminal_value_vanishes():
    _, xs = sample_joint_batch(bridge(), PathGrid(64), 50, seed=2)
    assert np.max(np.abs(xs[:, -1])) < 1e-12


def test_partition_projection_kills_knot_prefixes():
    A = ProjectionComplement.from_partition((0.25, 0.5))
    grid = PathGrid(16)
    _, xs = sample_joint_batch(A, grid, 40, seed=3)
    # prefixes ending at each knot are in the projected-out span
    assert np.max(np.abs(xs[:, 4])) < 1e-12
    assert np.max(np.abs(xs[:, 8])) < 1e-12
    assert np.max(np.abs(xs[:, -1])) < 1e-12


def test_mult_increment_variance():
    c = 2.0
    _, xs = sample_joint_batch(Multiplication(const(c)), PathGrid(8),
                               30000, seed=4)
    incr = np.diff(xs, axis=1)
    v = incr.var(axis=0)
    assert np.max(np.abs(v - c * c / 8.0)) < 4 * (c * c / 8.0) / math.sqrt(15000)


def test_covariance_matches_increment_gram():
    grid = PathGrid(8)
    cells = [Interval(j / 8.0, (j + 1) / 8.0) for j in range(8)]
    rng_ops = [Identity(), bridge(),
               Multiplication(GridFunction(8, np.linspace(0.6, 1.4, 8)))]
    for A in rng_ops:
        want = increment_gram(A, cells).matrix
        _, xs = sample_joint_batch(A, grid, 60000, seed=5)
        incr = np.diff(xs, axis=1)
        got = np.cov(incr.T, bias=True)
        scale = 4.0 * np.sqrt((np.outer(np.diag(want), np.diag(want))
                               + want ** 2) / 60000)
        assert np.all(np.abs(got - want) <= scale + 1e-12)


def test_batch_matches_single_path_streams():
    grid = PathGrid(16)
    A = bridge()
    coeffs = path_coefficients(A, grid)
    zs, xs = sample_joint_batch(A, grid, 5, seed=7, start=2)
    for i in range(5):
        s = sample_joint(A, grid, path_stream(7, 2 + i), coeffs=coeffs)
        assert_allclose(s.x, xs[i], atol=1e-13)
        assert_allclose(s.z, zs[i], atol=1e-13)


def test_pairing_normal_with_correct_variance():
    grid = PathGrid(32)
    h = StepFunction(np.array([0.0, 0.5, 1.0]), np.array([2.0, -1.0]))
    zs, _unused_x = sample_joint_batch(Identity(), grid, 30000, seed=8)
    vals = pairing_batch(zs, h, grid)
    hsq = 2.0 ** 2 * 0.5 + 1.0 ** 2 * 0.5
    assert abs(vals.mean()) < 4 * math.sqrt(hsq / 30000)
    assert abs(vals.var() - hsq) < 4 * hsq * math.sqrt(2.0 / 30000)


def test_pairing_zero_function():
    grid = PathGrid(8)
    s = sample_joint(Identity(), grid, np.random.default_rng(9))
    assert pairing(s, const(0.0)) == 0.0


def test_pairing_prefix_indicator_reproduces_path():
    # (1_[0,t], xi) = x(t) for the identity integrator at grid-aligned t
    grid = PathGrid(16)
    s = sample_joint(Identity(), grid, np.random.default_rng(10))
    for j in (4, 8, 13):
        h = indicator(Interval(0.0, j / 16.0))
        assert_allclose(pairing(s, h), s.x[j], atol=1e-13)


def test_pairing_grid_mismatch_raises():
    grid = PathGrid(8)
    s = sample_joint(Identity(), grid, np.random.default_rng(11))
    with pytest.raises(ResolutionError):
        pairing(s, GridFunction(16, np.ones(16)))


def test_ito_sum_telescopes():
    grid = PathGrid(32)
    s = sample_joint(Identity(), grid, np.random.default_rng(12))
    total = ito_sum(np.ones(32), s.x)
    assert_allclose(total, s.x[-1] - s.x[0], atol=1e-14)
    assert ito_sum(np.zeros(32), s.x) == 0.0


def test_ito_sum_length_mismatch():
    with pytest.raises(ResolutionError):
        ito_sum(np.ones(5), np.zeros(5))


def test_ito_formula_rate():
    # E[(int w dw - (w(1)^2 - 1)/2)^2] = O(1/n)
    errs = []
    for n in (16, 64, 256):
        _, xs = sample_joint_batch(Identity(), PathGrid(n), 4000, seed=13)
        ito = ito_sum_batch(xs[:, :-1], xs)
        target = (xs[:, -1] ** 2 - 1.0) / 2.0
        errs.append(np.mean((ito - target) ** 2))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.01


def test_ito_sum_batch_matches_scalar():
    _, xs = sample_joint_batch(Identity(), PathGrid(8), 6, seed=14)
    vals = np.arange(8.0)
    batch = ito_sum_batch(np.tile(vals, (6, 1)), xs)
    for i in range(6):
        assert_allclose(batch[i], ito_sum(vals, xs[i]), atol=1e-14)


def test_bridge_covariance_single_bridge():
    cov_a, cov_b = bridge_covariance_check((), n=32)
    times = np.linspace(0, 1, 33)[1:-1]
    want = np.minimum.outer(times, times) - np.outer(times, times)
    assert np.max(np.abs(cov_a - cov_b)) < 1e-12
    inner = cov_a[1 : len(times) + 1, 1 : len(times) + 1]
    assert_allclose(inner, want, atol=1e-12)


def test_bridge_covariance_partitions():
    for knots in ((0.5,), (0.25, 0.5, 0.75)):
        cov_a, cov_b = bridge_covariance_check(knots, n=32)
        assert np.max(np.abs(cov_a - cov_b)) < 1e-12
        assert_allclose(cov_a, cov_a.T, atol=1e-14)
        assert np.linalg.eigvalsh(cov_a).min() > -1e-10


def test_joint_sample_validation():
    grid = PathGrid(4)
    with pytest.raises(ValueError):
        JointSample(grid=grid, z=np.zeros(4), x=np.array([1.0, 0, 0, 0, 0]),
                    seed=0)


def test_export_paths_csv(tmp_path):
    grid = PathGrid(4)
    _, xs = sample_joint_batch(Identity(), grid, 3, seed=15)
    out = tmp_path / "paths.csv"
    export_paths_csv(str(out), grid, xs)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "t,x0,x1,x2"
    assert len(lines) == 6  # header + 5 grid times
    row = [float(v) for v in lines[-1].split(",")]
    assert row[0] == 1.0 and len(row) == 4
    assert lines[1].startswith("0,0.0,")  # x(0) = 0 for every path
