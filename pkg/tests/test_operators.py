import numpy as np
import pytest
from numpy.testing import assert_allclose

from silt.errors import ConfigError
from silt.functions import (GridFunction, Interval, StepFunction,
                            grid_function, indicator, inner_product, norm_sq)
from silt.gram import cavalieri_both_sides, gram_det
from silt.operators import (Identity, Multiplication, ProjectionComplement,
                            increment_gram, increment_gram_batch,
                            pair_masses_batch, parse_operator)


def const(c):
    return StepFunction(np.array([0.0, 1.0]), np.array([float(c)]))


def bridge():
    return ProjectionComplement.from_partition(())


def test_identity_apply_is_noop():
    f = indicator(Interval(0.0, 0.37))
    g = Identity().apply(f)
    assert_allclose(norm_sq(g), norm_sq(f), atol=1e-15)
    assert inner_product(f, g) == pytest.approx(norm_sq(f))


def test_bridge_apply_subtracts_mean():
    # (I - P_1) 1_[0,t] = 1_[0,t] - t * 1_[0,1]
    t = 0.3
    g = bridge().apply(indicator(Interval(0.0, t)))
    pts = np.array([0.1, 0.2, 0.5, 0.9])
    want = np.where(pts < t, 1.0 - t, -t)
    assert_allclose(g(pts), want, atol=1e-14)


def test_multiplication_apply_scales():
    A = Multiplication(const(3.0))
    g = A.apply(indicator(Interval(0.2, 0.6)))
    assert_allclose(norm_sq(g), 9.0 * 0.4, atol=1e-14)


def test_adjoints_match_direct_application():
    h = StepFunction(np.array([0.0, 0.5, 1.0]), np.array([1.0, -2.0]))
    assert_allclose(norm_sq(Identity().apply_adjoint(h)), norm_sq(h))
    A = Multiplication(const(2.0))
    assert_allclose(norm_sq(A.apply_adjoint(h)), 4.0 * norm_sq(h), atol=1e-14)


def test_projection_complement_kills_own_span():
    A = bridge()
    out = A.apply_adjoint(A.basis[0])
    assert norm_sq(out) < 1e-24


def test_adjoint_is_adjoint():
    # <A f, g> == <f, A* g> for every variant on random step pairs.
    rng = np.random.default_rng(5)
    phi = GridFunction(16, rng.uniform(0.5, 2.0, size=16))
    ops = [Identity(), Multiplication(phi),
           ProjectionComplement.from_partition((0.5,))]
    for A in ops:
        for _ in range(10):
            f = StepFunction(np.array([0.0, rng.uniform(0.2, 0.8), 1.0]),
                             rng.uniform(-2, 2, size=2))
            g = StepFunction(np.array([0.0, rng.uniform(0.2, 0.8), 1.0]),
                             rng.uniform(-2, 2, size=2))
            lhs = inner_product(A.apply(f), g)
            rhs = inner_product(f, A.apply_adjoint(g))
            assert_allclose(lhs, rhs, atol=5e-3 if A.label() == "mult" else 1e-12)


def test_increment_gram_identity_disjoint():
    G = increment_gram(Identity(), [Interval(0.0, 0.5), Interval(0.5, 1.0)])
    assert_allclose(G.matrix, np.diag([0.5, 0.5]), atol=1e-15)


def test_increment_gram_bridge_prefix():
    t = 0.37
    G = increment_gram(bridge(), [Interval(0.0, t)])
    assert_allclose(G.matrix, [[t * (1 - t)]], atol=1e-14)


def test_increment_gram_mult_const():
    c, a, b = 2.0, 0.25, 0.75
    G = increment_gram(Multiplication(const(c)), [Interval(a, b)])
    assert_allclose(G.matrix, [[c * c * (b - a)]], atol=1e-14)


def test_increment_gram_reorder_invariance():
    ivs = [Interval(0.0, 0.3), Interval(0.2, 0.7), Interval(0.5, 1.0)]
    perm = [2, 0, 1]
    for A in (Identity(), bridge(), Multiplication(const(1.5))):
        G = increment_gram(A, ivs).matrix
        Gp = increment_gram(A, [ivs[i] for i in perm]).matrix
        assert_allclose(Gp, G[np.ix_(perm, perm)], atol=1e-14)


def test_increment_gram_symmetric_psd():
    rng = np.random.default_rng(11)
    for A in (Identity(), bridge(), Multiplication(const(0.7))):
        for _ in range(10):
            los = np.sort(rng.uniform(0.0, 0.9, size=3))
            ivs = [Interval(lo, min(lo + rng.uniform(0.05, 0.4), 1.0))
                   for lo in los]
            G = increment_gram(A, ivs).matrix
            assert_allclose(G, G.T, atol=1e-14)
            assert np.linalg.eigvalsh(G).min() > -1e-10


def test_projcomp_gram_det_matches_cavalieri():
    A = ProjectionComplement.from_partition((0.5,))
    gs = [indicator(Interval(0.1, 0.6)), indicator(Interval(0.3, 0.9))]
    lhs = gram_det([A.apply(g) for g in gs])
    _, rhs = cavalieri_both_sides(A.basis, gs)
    assert abs(lhs - rhs) < 1e-10


def test_multiplication_det_sandwich():
    rng = np.random.default_rng(19)
    phi = GridFunction(32, rng.uniform(0.5, 1.8, size=32))
    A = Multiplication(phi)
    m, M = A.lower, A.upper
    for _ in range(20):
        n = rng.integers(1, 4)
        los = np.sort(rng.uniform(0.0, 0.8, size=n))
        ivs = [Interval(lo, min(lo + rng.uniform(0.05, 0.5), 1.0))
               for lo in los]
        base = np.linalg.det(increment_gram(Identity(), ivs).matrix)
        det = np.linalg.det(increment_gram(A, ivs).matrix)
        assert det >= m ** (2 * n) * base - 1e-12
        assert det <= M ** (2 * n) * base + 1e-12


def test_increment_gram_batch_matches_scalar():
    rng = np.random.default_rng(2)
    A = bridge()
    los = rng.uniform(0.0, 0.5, size=(6, 2))
    his = los + rng.uniform(0.05, 0.4, size=(6, 2))
    his = np.minimum(his, 1.0)
    batch = increment_gram_batch(A, los, his)
    for i in range(6):
        ivs = [Interval(los[i, 0], his[i, 0]), Interval(los[i, 1], his[i, 1])]
        assert_allclose(batch[i], increment_gram(A, ivs).matrix, atol=1e-13)


def test_pair_masses_batch_matches_inner_products():
    rng = np.random.default_rng(8)
    h = StepFunction(np.array([0.0, 0.35, 1.0]), np.array([1.2, -0.4]))
    for A in (Identity(), bridge(), Multiplication(const(2.0))):
        los = rng.uniform(0.0, 0.5, size=(5, 2))
        his = los + rng.uniform(0.05, 0.4, size=(5, 2))
        got = pair_masses_batch(A, h, los, his)
        ah = A.apply_adjoint(h)
        for i in range(5):
            for j in range(2):
                want = inner_product(indicator(Interval(los[i, j], his[i, j])), ah)
                assert_allclose(got[i, j], want, atol=1e-12)


def test_multiplication_requires_nonvanishing_symbol():
    with pytest.raises(ValueError):
        Multiplication(StepFunction(np.array([0.0, 0.5, 1.0]),
                                    np.array([1.0, 0.0])))


def test_projection_complement_requires_orthonormal_basis():
    not_unit = indicator(Interval(0.0, 0.5))  # norm sqrt(0.5)
    with pytest.raises(ValueError):
        ProjectionComplement((not_unit,))


def test_parse_operator_forms(tmp_path):
    assert parse_operator("identity").label() == "identity"
    A = parse_operator("mult:const:2")
    assert A.lower == 2.0 and A.upper == 2.0
    B = parse_operator("projcomp:0.5")
    assert B.label() == "projcomp"
    gf = tmp_path / "phi.txt"
    gf.write_text("1.0\n1.5\n2.0\n1.25\n")
    C = parse_operator(f"mult:{gf}")
    assert C.lower == 1.0 and C.upper == 2.0
    for bad in ("mult:const:0", "wibble", "projcomp:1.5", "mult:"):
        with pytest.raises(ConfigError):
            parse_operator(bad)


def test_bounds_for_mult_variant():
    phi = grid_function(lambda r: 1.0 + r, 64)
    A = Multiplication(phi)
    assert 1.0 <= A.lower <= A.upper <= 2.0
