import numpy as np
import pytest
from numpy.testing import assert_allclose

from silt.errors import EmptyBasisError, ResolutionError
from silt.functions import (GridFunction, Interval, StepFunction, as_step,
                            grid_function, indicator, inner_product, norm_sq,
                            orthonormalize, prefix_integral)


def test_indicator_overlap_inner_products():
    f = indicator(Interval(0.0, 0.5))
    g = indicator(Interval(0.25, 0.75))
    assert_allclose(inner_product(f, g), 0.25, rtol=0, atol=1e-15)
    h = indicator(Interval(0.5, 1.0))
    assert inner_product(f, h) == 0.0


def test_indicator_norm_is_length():
    for a, b in [(0.0, 1.0), (0.1, 0.4), (0.3, 0.3)]:
        f = indicator(Interval(a, b))
        assert_allclose(norm_sq(f), b - a, rtol=0, atol=1e-15)


def test_indicator_full_interval_is_constant_one():
    f = indicator(Interval(0.0, 1.0))
    ts = np.linspace(0.0, 0.999, 50)
    assert_allclose(f(ts), np.ones_like(ts))


def test_grid_inner_product_midpoint_rule():
    # <r, r> = 1/3; midpoint rule is second order.
    phi = grid_function(lambda r: r, 1000)
    assert_allclose(inner_product(phi, phi), 1.0 / 3.0, atol=1e-6)


def test_step_vs_grid_discretization_error_decreases():
    # Jump locations chosen off every grid used below so the midpoint rule
    # actually commits an O(1/n) error.
    f = StepFunction(np.array([0.0, 0.29371, 0.70257, 1.0]),
                     np.array([1.0, -2.0, 0.5]))
    g = StepFunction(np.array([0.0, 0.41437, 1.0]), np.array([0.7, 1.3]))
    exact = inner_product(f, g)
    errs = []
    for n in (10 ** 2, 10 ** 3, 10 ** 4):
        fg = grid_function(f, n)
        gg = grid_function(g, n)
        errs.append(abs(inner_product(fg, gg) - exact))
    assert errs[0] > errs[1] > errs[2]


def test_grid_resolution_mismatch_raises():
    f = GridFunction(10, np.ones(10))
    g = GridFunction(20, np.ones(20))
    with pytest.raises(ResolutionError):
        inner_product(f, g)


def test_inner_product_symmetric_bilinear():
    rng = np.random.default_rng(7)
    for _ in range(20):
        bks = np.sort(rng.uniform(0.05, 0.95, size=2))
        f = StepFunction(np.array([0.0, *bks, 1.0]), rng.uniform(-2, 2, size=3))
        g = StepFunction(np.array([0.0, rng.uniform(0.1, 0.9), 1.0]),
                         rng.uniform(-2, 2, size=2))
        assert_allclose(inner_product(f, g), inner_product(g, f), atol=1e-14)
        two_f = StepFunction(f.breakpoints, 2.0 * f.values)
        assert_allclose(inner_product(two_f, g), 2 * inner_product(f, g),
                        atol=1e-14)


def test_cauchy_schwarz_random_pairs():
    rng = np.random.default_rng(12)
    for _ in range(50):
        f = StepFunction(np.array([0.0, rng.uniform(0.2, 0.8), 1.0]),
                         rng.uniform(-3, 3, size=2))
        g = grid_function(lambda r: np.sin(rng.uniform(1, 9) * r), 64)
        fg = inner_product(as_step(f), as_step(f))
        lhs = inner_product(f, f) * inner_product(g, g)
        assert inner_product(as_step(f), as_step(g)) ** 2 <= (
            norm_sq(f) * norm_sq(g) + 1e-12)
        assert_allclose(fg, norm_sq(f), atol=1e-14)
        assert lhs >= 0.0


def test_orthonormalize_unit_vector_fixed():
    e = indicator(Interval(0.0, 1.0))
    out = orthonormalize([e])
    assert len(out) == 1
    assert_allclose(norm_sq(out[0]), 1.0, atol=1e-13)


def test_orthonormalize_two_span():
    out = orthonormalize([indicator(Interval(0.0, 0.5)),
                          indicator(Interval(0.0, 1.0))])
    assert len(out) == 2
    for i in range(2):
        for j in range(2):
            want = 1.0 if i == j else 0.0
            assert_allclose(inner_product(out[i], out[j]), want, atol=1e-12)


def test_orthonormalize_drops_dependent():
    e = indicator(Interval(0.0, 1.0))
    two_e = StepFunction(np.array([0.0, 1.0]), np.array([2.0]))
    out = orthonormalize([e, two_e])
    assert len(out) == 1


def test_orthonormalize_all_zero_raises():
    zero = StepFunction(np.array([0.0, 1.0]), np.array([0.0]))
    with pytest.raises(EmptyBasisError):
        orthonormalize([zero, zero])


def test_orthonormalize_random_families_identity_gram():
    rng = np.random.default_rng(3)
    for _ in range(25):
        fs = []
        for _ in range(rng.integers(1, 5)):
            bks = np.unique(rng.uniform(0.05, 0.95, size=rng.integers(1, 4)))
            vals = rng.uniform(-2, 2, size=len(bks) + 1)
            fs.append(StepFunction(np.array([0.0, *bks, 1.0]), vals))
        out = orthonormalize(fs)
        for i in range(len(out)):
            for j in range(len(out)):
                want = 1.0 if i == j else 0.0
                assert abs(inner_product(out[i], out[j]) - want) < 1e-12


def test_prefix_integral_matches_running_quadrature():
    f = StepFunction(np.array([0.0, 0.25, 0.5, 1.0]), np.array([2.0, -1.0, 0.5]))
    bks, cum = prefix_integral(f)
    # int_0^t f at t = 0.5 is 2*0.25 - 1*0.25 = 0.25
    assert_allclose(np.interp(0.5, bks, cum), 0.25, atol=1e-15)
    assert_allclose(np.interp(1.0, bks, cum), 0.5, atol=1e-15)
    assert cum[0] == 0.0


def test_as_step_preserves_inner_products():
    g = grid_function(lambda r: 1.0 + r, 8)
    s = as_step(g)
    assert_allclose(inner_product(g, g), inner_product(s, s), atol=1e-14)
