import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from afieti.bspline import (KnotVector, basis_derivatives, collocation_matrix, eval_basis,
                            eval_basis_derivatives, gauss_rule, knot_insertion_matrix)


def cox_de_boor(knots, p, i, x):
    """Plain recursive definition, 0/0 = 0, right-continuous except at 1."""
    if p == 0:
        if knots[i] <= x < knots[i + 1]:
            return 1.0
        if x == knots[-1] and knots[i] < knots[i + 1] == knots[-1]:
            return 1.0
        return 0.0
    out = 0.0
    if knots[i + p] > knots[i]:
        out += (x - knots[i]) / (knots[i + p] - knots[i]) * cox_de_boor(knots, p - 1, i, x)
    if knots[i + p + 1] > knots[i + 1]:
        out += (knots[i + p + 1] - x) / (knots[i + p + 1] - knots[i + 1]) * cox_de_boor(knots, p - 1, i + 1, x)
    return out


def test_hat_functions():
    first, v = eval_basis(KnotVector([0, 0, 1, 1], 1), 0.5)
    assert first == 0
    np.testing.assert_allclose(v, [0.5, 0.5])


def test_nodal_endpoints():
    kv = KnotVector([0, 0, 0, 1, 1, 1], 2)
    np.testing.assert_allclose(eval_basis(kv, 0.0)[1], [1, 0, 0])
    first, v = eval_basis(kv, 1.0)
    assert first == 0 and v[-1] == 1.0


def test_quadratic_values_match_recursion():
    kv = KnotVector([0, 0, 0, 0.5, 1, 1, 1], 2)
    first, v = eval_basis(kv, 0.25)
    np.testing.assert_allclose(v, [0.25, 0.625, 0.125], atol=1e-15)
    ref = [cox_de_boor(kv.knots, 2, first + j, 0.25) for j in range(3)]
    np.testing.assert_allclose(v, ref, atol=1e-15)


def test_domain_error():
    kv = KnotVector.uniform(2, 3)
    with pytest.raises(ValueError):
        eval_basis(kv, 1.5)
    with pytest.raises(ValueError):
        eval_basis_derivatives(kv, 0.3, 3)


def test_linear_derivatives():
    _, t = eval_basis_derivatives(KnotVector([0, 0, 1, 1], 1), 0.3, 1)
    np.testing.assert_allclose(t[1], [-1, 1])
    np.testing.assert_allclose(t[0], eval_basis(KnotVector([0, 0, 1, 1], 1), 0.3)[1])


def test_quadratic_derivative_finite_difference():
    # the hand value sometimes quoted, [-1, .5, .5], is not the derivative;
    # the difference quotient gives [-2, 1, 1]
    kv = KnotVector([0, 0, 0, 0.5, 1, 1, 1], 2)
    first, t = eval_basis_derivatives(kv, 0.25, 1)
    h = 1e-6
    fd = (eval_basis(kv, 0.25 + h)[1] - eval_basis(kv, 0.25 - h)[1]) / (2 * h)
    np.testing.assert_allclose(t[1], fd, atol=1e-4)
    np.testing.assert_allclose(t[1], [-2, 1, 1], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(p=st.integers(1, 5), n_el=st.integers(1, 7), x=st.floats(0, 1))
def test_partition_of_unity_and_recursion(p, n_el, x):
    kv = KnotVector.uniform(p, n_el)
    first, t = eval_basis_derivatives(kv, x, 1)
    assert abs(t[0].sum() - 1) < 1e-13
    assert abs(t[1].sum()) < 1e-10 * max(1, np.abs(t[1]).max())
    ref = [cox_de_boor(kv.knots, p, first + j, x) for j in range(p + 1)]
    np.testing.assert_allclose(t[0], ref, atol=1e-13)


def test_collocation_matrix_rows():
    kv = KnotVector.uniform(3, 5)
    x = np.linspace(0, 1, 17)
    C = collocation_matrix(kv, x)
    assert C.shape == (17, kv.m)
    np.testing.assert_allclose(C.sum(axis=1), 1, atol=1e-14)


def test_knot_insertion_examples():
    kv = KnotVector.uniform(2, 3)
    np.testing.assert_allclose(knot_insertion_matrix(kv, kv), np.eye(kv.m))
    T = knot_insertion_matrix(KnotVector([0, 0, 1, 1], 1), KnotVector([0, 0, .5, 1, 1], 1))
    np.testing.assert_allclose(T, [[1, 0], [.5, .5], [0, 1]])
    with pytest.raises(ValueError):
        knot_insertion_matrix(KnotVector.uniform(1, 2), KnotVector.uniform(1, 3))
    with pytest.raises(ValueError):
        KnotVector.uniform(1, 1).refine([0.5, 0.5, 0.5])


@settings(max_examples=25, deadline=None)
@given(p=st.integers(1, 4), n_el=st.integers(1, 4), extra=st.lists(st.floats(0.01, 0.99), max_size=5, unique=True))
def test_knot_insertion_pointwise(p, n_el, extra):
    coarse = KnotVector.uniform(p, n_el)
    fine = coarse.refine(extra)
    T = knot_insertion_matrix(coarse, fine)
    assert np.all(T >= -1e-14)
    np.testing.assert_allclose(T.sum(axis=1), 1, atol=1e-13)
    x = np.linspace(0, 1, 50)
    np.testing.assert_allclose(collocation_matrix(coarse, x), collocation_matrix(fine, x) @ T, atol=1e-12)


def test_gauss_rule():
    r = gauss_rule(KnotVector([0, 0, 1, 1], 1), 1)
    np.testing.assert_allclose(r.points, [[0.5]])
    np.testing.assert_allclose(r.weights, [[1.0]])
    r2 = gauss_rule(KnotVector.uniform(1, 1), 2)
    assert abs(np.sum(r2.weights * r2.points ** 2) - 1 / 3) < 1e-15
    kv = KnotVector([0, 0, 0, .3, .3, .7, 1, 1, 1], 2)
    r = gauss_rule(kv)
    np.testing.assert_allclose(r.weights.sum(axis=1), np.diff(kv.breakpoints))
    assert np.all(r.weights > 0)


def test_gauss_mass_matches_fine_reference():
    from scipy.integrate import quad
    kv = KnotVector.uniform(3, 4)
    r = gauss_rule(kv)
    B = collocation_matrix(kv, r.points.ravel())
    M = B.T @ (r.weights.ravel()[:, None] * B)
    for i, j in [(0, 0), (1, 2), (3, 4), (6, 6)]:
        f = lambda x: collocation_matrix(kv, [x])[0, i] * collocation_matrix(kv, [x])[0, j]
        ref = sum(quad(f, a, b, epsabs=1e-15, epsrel=1e-14)[0] for a, b in zip(kv.breakpoints[:-1], kv.breakpoints[1:]))
        assert abs(M[i, j] - ref) < 1e-13


def test_knot_vector_validation():
    with pytest.raises(ValueError):
        KnotVector([0, 0.1, 1, 1], 1)
    with pytest.raises(ValueError):
        KnotVector([0, 0, 0.6, 0.5, 1, 1], 1)
    kv = KnotVector([0, 0, 0, .2, .6, 1, 1, 1], 2)
    a, h = kv.quasi_uniformity()
    assert h == pytest.approx(0.4) and a == pytest.approx(0.5)
    np.testing.assert_allclose(kv.greville(), [0, .1, .4, .8, 1])


def test_vectorized_matches_pointwise():
    kv = KnotVector.uniform(3, 6)
    x = np.random.default_rng(0).random(40)
    first, ders = basis_derivatives(kv, x, 2)
    for k, xi in enumerate(x):
        f, t = eval_basis_derivatives(kv, xi, 2)
        assert f == first[k]
        np.testing.assert_allclose(ders[k], t, atol=1e-12)
