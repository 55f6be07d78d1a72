import numpy as np
import pytest

from boundary import LiftSpec, eval_h, eval_h_gradient, eval_zeta, lift_energy, lift_h1_bound, lift_h1_norm
from conftest import FAMILY
from geometry import profile_norms


@pytest.fixture
def lift(params) -> LiftSpec:
    return LiftSpec.from_params(params)


def test_zeta_at_the_kinks(lift):
    assert eval_zeta(lift, 1.0) == (0.0, 0.0, 0.0)
    value, first, _ = eval_zeta(lift, 2.0)
    assert value == pytest.approx(1.0)
    assert first == pytest.approx(2.0)


def test_zeta_inside_the_ramp(lift):
    assert eval_zeta(lift, 1.5) == pytest.approx((0.25, 1.0, 2.0))


def test_zeta_is_constant_outside_the_ramp(lift):
    value, first, second = eval_zeta(lift, np.array([0.0, 0.5, 2.5, 7.0]))
    np.testing.assert_array_equal(value, [0.0, 0.0, 1.0, 1.0])
    np.testing.assert_array_equal(first, 0.0)
    np.testing.assert_array_equal(second, 0.0)


def test_zeta_scales_with_potential_and_thickness():
    value, first, second = eval_zeta(LiftSpec(V=3.0, d=2.0), 2.0)
    assert (value, first, second) == pytest.approx((0.75, 1.5, 1.5))


def test_lift_boundary_values(make_profile, lift):
    profile = make_profile("cosine(-0.5)", 64)
    x = profile.x
    np.testing.assert_array_equal(eval_h(lift, profile, x, np.full_like(x, -1.0)), 0.0)
    np.testing.assert_allclose(eval_h(lift, profile, x, profile.u), 0.0, atol=1e-15)
    np.testing.assert_allclose(eval_h(lift, profile, x, profile.u + 1.0), 1.0, atol=1e-14)
    np.testing.assert_allclose(eval_h(lift, profile, x, profile.u + 0.5), 0.25, atol=1e-14)


@pytest.mark.parametrize("name", FAMILY)
def test_lift_vanishes_on_the_gap_layer(make_profile, lift, rng, name):
    profile = make_profile(name, 64)
    x = rng.uniform(-1.0, 1.0, 1000)
    u = profile.value_at(x)
    z = -1.0 + rng.uniform(0.0, 1.0, 1000) * (u + 1.0)
    np.testing.assert_array_equal(eval_h(lift, profile, x, z), 0.0)
    hx, hz = eval_h_gradient(lift, profile, x, z)
    np.testing.assert_array_equal(hx, 0.0)
    np.testing.assert_array_equal(hz, 0.0)


@pytest.mark.parametrize("name", FAMILY)
def test_lift_is_constant_along_the_graph_direction(make_profile, lift, rng, name):
    profile = make_profile(name, 64)
    x = rng.uniform(-1.0, 1.0, 500)
    z = profile.value_at(x) + rng.uniform(0.0, 1.0, 500)
    hx, hz = eval_h_gradient(lift, profile, x, z)
    np.testing.assert_allclose(hx + profile.slope_at(x) * hz, 0.0, atol=1e-14)


def test_lift_is_monotone_in_z_and_bounded(make_profile, lift):
    profile = make_profile("bump(0.4,0.6)", 64)
    z = np.linspace(-1.0, 1.0, 401)
    for x in (-0.9, -0.3, 0.0, 0.45):
        values = eval_h(lift, profile, np.full_like(z, x), z)
        assert np.all(np.diff(values) >= 0.0)
        assert values.min() >= 0.0
        assert values.max() <= 1.0


def test_flat_lift_energy(make_profile, lift, params):
    assert lift_energy(lift, make_profile("flat", 16), params.sigma2) == pytest.approx(8.0 / 3.0)


def test_flat_lift_h1_norm(make_profile, lift):
    expected = np.sqrt(2.0 * (1.0 / 5.0 + 4.0 / 3.0))
    assert lift_h1_norm(lift, make_profile("flat", 16)) == pytest.approx(expected)


@pytest.mark.parametrize("name", FAMILY)
def test_lift_h1_norm_respects_the_family_bound(make_profile, lift, params, name):
    profile = make_profile(name, 256)
    kappa = 10.0
    assert profile_norms(profile).h2 <= kappa
    assert lift_h1_norm(lift, profile) <= lift_h1_bound(lift, params, kappa)
