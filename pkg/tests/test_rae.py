"""Autoencoder: dimension rule, encode/decode, curves, mesh, identity bound."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowgeom import rae
from flowgeom.geometry import PullbackManifold, banana_diffeo, identity_diffeo
from flowgeom.potentials import DiagonalQuadratic


def brute_force_dimension(lam, eps):
    """Direct scan of the defining rule, independent of the implementation."""
    lam = np.asarray(lam, dtype=np.float64)
    d = lam.size
    order = np.argsort(-lam, kind="stable")
    total = lam.sum()
    if lam[order[-1]] > eps * total:
        return d
    for d_prime in range(1, d):
        tail = sum(lam[order[k]] for k in range(d_prime, d))
        if tail <= eps * total:
            return d_prime
    return d


def identity_manifold(lam):
    lam = np.asarray(lam, dtype=np.float64)
    return PullbackManifold(identity_diffeo(lam.size), DiagonalQuadratic(lam.size, lam))


# -- dimension selection -----------------------------------------------------


def test_select_dimension_hand_cases():
    lam = [4.0, 1.0, 0.01]
    assert rae.select_dimension(lam, 0.01) == 2   # tail 0.01 <= 0.0501
    assert rae.select_dimension(lam, 0.0) == 3    # smallest variance > 0 budget
    assert rae.select_dimension(lam, 1.0) == 1    # everything fits the budget


def test_select_dimension_equal_variances_boundary():
    lam = np.full(5, 2.0)
    eps = (2.0 / 10.0) * (1 - 1e-12)  # just below lam / total
    assert rae.select_dimension(lam, eps) == 5


def test_select_dimension_matches_brute_force_random(rng):
    for _ in range(2000):
        d = rng.integers(1, 9)
        lam = rng.uniform(1e-3, 10.0, size=d)
        eps = rng.uniform(0.0, 1.0)
        assert rae.select_dimension(lam, eps) == brute_force_dimension(lam, eps)


@given(
    st.lists(st.floats(min_value=1e-6, max_value=1e6), min_size=1, max_size=10),
    st.floats(min_value=0.0, max_value=1.0),
)
@settings(max_examples=300, deadline=None)
def test_select_dimension_matches_brute_force_property(lams, eps):
    assert rae.select_dimension(lams, eps) == brute_force_dimension(lams, eps)


def test_select_dimension_validates_inputs():
    with pytest.raises(ValueError):
        rae.select_dimension([1.0, -1.0], 0.5)
    with pytest.raises(ValueError):
        rae.select_dimension([1.0], 1.5)


# -- encode / decode -----------------------------------------------------------


def test_encode_projects_in_variance_order():
    m = identity_manifold([4.0, 1.0, 0.01])
    config = rae.RaeConfig.from_variances(m.potential.variances, 0.01)
    assert config.d_eps == 2
    z = rae.encode(m, config, np.array([7.0, 8.0, 9.0]))
    assert np.array_equal(z, [7.0, 8.0])


def test_encode_reorders_axes():
    m = identity_manifold([0.01, 4.0, 1.0])
    config = rae.RaeConfig.from_variances(m.potential.variances, 0.01)
    assert config.order.tolist() == [1, 2, 0]
    z = rae.encode(m, config, np.array([7.0, 8.0, 9.0]))
    assert np.array_equal(z, [8.0, 9.0])


def test_decode_zero_pads_discarded_axes():
    m = identity_manifold([4.0, 1.0, 0.01])
    config = rae.RaeConfig.from_variances(m.potential.variances, 0.01)
    assert np.array_equal(rae.decode(m, config, np.array([7.0, 8.0])),
                          [7.0, 8.0, 0.0])


def test_decode_banana_axis():
    # retain only the high-variance axis (index 1), then decode through the
    # analytic inverse x1 = y1 + y2^2 / 9
    m = PullbackManifold(banana_diffeo(), DiagonalQuadratic(2, [0.1, 4.0]))
    config = rae.RaeConfig.from_variances(m.potential.variances, 0.05)
    assert config.d_eps == 1 and config.retained.tolist() == [1]
    out = rae.decode(m, config, np.array([3.0]))
    assert np.abs(out - [1.0, 3.0]).max() <= 1e-12


def test_projection_fixed_points(rng):
    m = identity_manifold([4.0, 1.0, 0.01])
    config = rae.RaeConfig.from_variances(m.potential.variances, 0.01)
    z = rng.normal(size=(20, 2))
    assert np.array_equal(rae.encode(m, config, rae.decode(m, config, z)), z)
    x = rng.normal(size=(20, 3))
    once = rae.decode(m, config, rae.encode(m, config, x))
    twice = rae.decode(m, config, rae.encode(m, config, once))
    assert np.abs(once - twice).max() <= 1e-12
    supported = x.copy()
    supported[:, 2] = 0.0
    assert np.abs(rae.decode(m, config, rae.encode(m, config, supported))
                  - supported).max() <= 1e-12


def test_decode_validates_latent_width():
    m = identity_manifold([2.0, 1.0])
    config = rae.RaeConfig.from_variances(m.potential.variances, 0.9)
    with pytest.raises(ValueError):
        rae.decode(m, config, np.zeros(2))


# -- reconstruction curves -------------------------------------------------------


def make_planar_data(rng, n=200, d=4):
    """Data supported on the first two coordinates only."""
    x = np.zeros((n, d))
    x[:, 0] = rng.normal(size=n) * 3.0
    x[:, 1] = rng.normal(size=n) * 2.0
    return x


def test_reconstruction_curve_decreasing_hits_zero_at_support(rng):
    x = make_planar_data(rng)
    lam = np.array([9.0, 4.0, 1e-4, 1e-4])
    m = identity_manifold(lam)
    ks, errors, order = rae.reconstruction_curve(m, x, order="decreasing")
    assert ks.tolist() == [0, 1, 2, 3, 4]
    assert errors[2] <= 1e-8
    assert errors[4] <= 1e-8
    assert np.all(np.diff(errors) <= 1e-12)  # identity flow: exact monotone


def test_reconstruction_curve_increasing_stays_high(rng):
    x = make_planar_data(rng)
    lam = np.array([9.0, 4.0, 1e-4, 1e-4])
    m = identity_manifold(lam)
    _, errors, _ = rae.reconstruction_curve(m, x, order="increasing")
    assert errors[2] >= 0.99 * errors[0]  # unimportant axes add nothing
    assert errors[4] <= 1e-8


def test_reconstruction_curve_random_is_seeded(rng):
    x = make_planar_data(rng)
    m = identity_manifold([9.0, 4.0, 1e-4, 1e-4])
    _, e1, o1 = rae.reconstruction_curve(m, x, order="random", seed=11)
    _, e2, o2 = rae.reconstruction_curve(m, x, order="random", seed=11)
    assert np.array_equal(o1, o2) and np.array_equal(e1, e2)
    with pytest.raises(ValueError):
        rae.reconstruction_curve(m, x, order="random")
    with pytest.raises(ValueError):
        rae.reconstruction_curve(m, x, order="sideways")


# -- manifold mesh ----------------------------------------------------------------


def test_mesh_identity_single_axis():
    m = identity_manifold([1.0, 1e-6])
    config = rae.RaeConfig.from_variances(m.potential.variances, 0.01)
    latents, decoded = rae.manifold_mesh(m, config, 3)
    assert latents.reshape(-1).tolist() == [-3.0, 0.0, 3.0]
    assert np.array_equal(decoded[:, 0], [-3.0, 0.0, 3.0])
    assert np.array_equal(decoded[:, 1], np.zeros(3))


def test_mesh_banana_traces_parabola():
    m = PullbackManifold(banana_diffeo(), DiagonalQuadratic(2, [0.1, 4.0]))
    config = rae.RaeConfig.from_variances(m.potential.variances, 0.05)
    _, decoded = rae.manifold_mesh(m, config, 21)
    assert np.abs(decoded[:, 0] - decoded[:, 1] ** 2 / 9.0).max() <= 1e-12


def test_mesh_single_point():
    m = PullbackManifold(banana_diffeo(), DiagonalQuadratic(2, [0.1, 4.0]))
    config = rae.RaeConfig.from_variances(m.potential.variances, 0.05)
    latents, decoded = rae.manifold_mesh(m, config, 1)
    assert latents.shape == (1, 1)
    assert np.abs(decoded[0] - m.from_flow_coords(np.zeros(2))).max() == 0.0


def test_mesh_grid_shape_2d():
    m = identity_manifold([4.0, 1.0, 1e-8])
    config = rae.RaeConfig.from_variances(m.potential.variances, 0.01)
    assert config.d_eps == 2
    latents, decoded = rae.manifold_mesh(m, config, 5)
    assert latents.shape == (25, 2) and decoded.shape == (25, 3)
    assert latents[:, 0].min() == -6.0 and latents[:, 0].max() == 6.0  # 3 sqrt(4)


def test_mesh_rejects_large_latent_spaces():
    m = identity_manifold(np.ones(6))
    config = rae.RaeConfig.from_variances(m.potential.variances, 0.0)
    assert config.d_eps == 6
    with pytest.raises(ValueError, match="reconstruction_curve"):
        rae.manifold_mesh(m, config, 3)


# -- identity-diffeomorphism error bound -------------------------------------------


def test_bound_check_identity_hand_case():
    empirical, bound = rae.bound_check_identity([4.0, 1.0, 0.01], 0.01,
                                                n_samples=200_000, seed=3)
    assert bound == pytest.approx(0.0501)
    # analytic expectation of the squared error is the discarded variance
    assert empirical == pytest.approx(0.01, rel=0.05)
    assert empirical <= bound


def test_bound_check_identity_full_dimension_cases():
    empirical, _ = rae.bound_check_identity([4.0, 1.0, 0.01], 0.0,
                                            n_samples=1000, seed=0)
    assert empirical == 0.0
    lam = np.full(4, 3.0)
    eps = (3.0 / 12.0) * (1 - 1e-9)
    assert brute_force_dimension(lam, eps) == 4
    empirical, _ = rae.bound_check_identity(lam, eps, n_samples=1000, seed=0)
    assert empirical == 0.0
