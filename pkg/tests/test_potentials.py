"""Diagonal quadratic potential: values, conjugacy, ordering."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowgeom.potentials import ConvexPotential, DiagonalQuadratic


def test_identity_covariance_values():
    pot = DiagonalQuadratic(2, [1.0, 1.0])
    v = np.array([3.0, 4.0])
    assert pot.value(v) == 12.5
    assert np.array_equal(pot.grad(v), v)
    assert np.array_equal(pot.conjugate_grad(v), v)


def test_anisotropic_hand_values():
    pot = DiagonalQuadratic(2, [4.0, 1.0])
    assert np.array_equal(pot.grad([2.0, 0.0]), [0.5, 0.0])
    assert np.array_equal(pot.conjugate_grad([0.5, 0.0]), [2.0, 0.0])


def test_conjugate_inverts_gradient():
    rng = np.random.default_rng(0)
    lam = rng.uniform(0.05, 20.0, size=6)
    pot = DiagonalQuadratic(6, lam)
    v = rng.normal(size=(1000, 6)) * 3
    assert np.abs(pot.conjugate_grad(pot.grad(v)) - v).max() <= 1e-12


def test_gradient_monotone_with_declared_mu():
    rng = np.random.default_rng(1)
    lam = rng.uniform(0.1, 5.0, size=4)
    pot = DiagonalQuadratic(4, lam)
    mu = pot.mu
    assert mu == pytest.approx(1.0 / lam.max())
    for _ in range(200):
        v, w = rng.normal(size=4), rng.normal(size=4)
        lhs = np.dot(pot.grad(v) - pot.grad(w), v - w)
        assert lhs >= mu * np.dot(v - w, v - w) - 1e-12


def test_grad_matches_finite_differences_of_value():
    rng = np.random.default_rng(2)
    pot = DiagonalQuadratic(5, rng.uniform(0.2, 3.0, size=5))
    v = rng.normal(size=5)
    h = 1e-6
    fd = np.array([
        (pot.value(v + h * e) - pot.value(v - h * e)) / (2 * h)
        for e in np.eye(5)
    ])
    rel = np.abs(pot.grad(v) - fd) / np.maximum(1.0, np.abs(fd))
    assert rel.max() <= 1e-8


def test_sorted_variance_order_hand_case():
    pot = DiagonalQuadratic(3, [0.01, 4.0, 1.0])
    assert pot.sorted_variance_order().tolist() == [1, 2, 0]


def test_sorted_variance_order_ties_are_stable():
    pot = DiagonalQuadratic(4, [2.0, 2.0, 2.0, 2.0])
    assert pot.sorted_variance_order().tolist() == [0, 1, 2, 3]


def test_sorted_variance_order_already_descending():
    pot = DiagonalQuadratic(3, [5.0, 2.0, 1.0])
    assert pot.sorted_variance_order().tolist() == [0, 1, 2]


@given(
    st.lists(st.floats(min_value=1e-3, max_value=1e3), min_size=1, max_size=12),
)
@settings(max_examples=100, deadline=None)
def test_conjugate_identity_property(lams):
    lam = np.asarray(lams)
    pot = DiagonalQuadratic(lam.size, lam)
    v = np.linspace(-2, 2, lam.size)
    assert np.abs(pot.conjugate_grad(pot.grad(v)) - v).max() <= 1e-10


def test_hessian_and_conjugate_hessian():
    lam = np.array([4.0, 0.25, 1.0])
    pot = DiagonalQuadratic(3, lam)
    u = np.array([1.0, 2.0, 3.0])
    assert np.allclose(pot.hessian_apply(None, u), u / lam)
    assert np.allclose(pot.conjugate_hessian_apply(None, u), u * lam)


def test_generic_conjugate_hessian_fallback_agrees():
    lam = np.array([2.0, 0.5])

    class Quad(ConvexPotential):
        dim = 2
        mu = 0.5

        def value(self, v):
            return 0.5 * np.sum(np.asarray(v) ** 2 / lam, axis=-1)

        def grad(self, v):
            return np.asarray(v) / lam

        def conjugate_grad(self, w):
            return np.asarray(w) * lam

        def hessian_apply(self, v, u):
            return np.asarray(u) / lam

    generic = Quad()
    exact = DiagonalQuadratic(2, lam)
    w, u = np.array([0.3, -1.2]), np.array([2.0, 5.0])
    assert np.allclose(
        generic.conjugate_hessian_apply(w, u),
        exact.conjugate_hessian_apply(w, u),
        atol=1e-12,
    )


def test_rejects_bad_variances():
    with pytest.raises(ValueError):
        DiagonalQuadratic(2, [1.0, -1.0])
    with pytest.raises(ValueError):
        DiagonalQuadratic(3, [1.0, 1.0])
