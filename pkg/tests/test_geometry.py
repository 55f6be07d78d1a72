import logging

import numpy as np
import pytest
from pydantic import ValidationError

from conftest import FAMILY
from errors import CollapseError, ProfileError
from geometry import (
    AdmissibilityClass,
    PhysicalParams,
    Profile,
    build_domain_summary,
    classify,
    map_T1,
    map_T1_inverse,
    map_T2,
    map_T2_inverse,
    profile_norms,
)
from profiles import builtin_profile


def test_flat_is_strictly_admissible(make_profile):
    record = classify(make_profile("flat", 64))
    assert record.classification == AdmissibilityClass.INTERIOR_S
    assert record.coincidence == []
    assert record.reasons == []
    assert record.admissible


def test_parabola_touches_at_center(make_profile):
    record = classify(make_profile("parabola_touch", 64))
    assert record.classification == AdmissibilityClass.BAR_S_ONLY
    assert record.coincidence == [(32, 32)]
    assert record.min_gap == pytest.approx(0.0, abs=1e-15)
    assert record.slope_right == pytest.approx(2.0)
    assert record.slope_left == pytest.approx(-2.0)


def test_swapped_permittivities_fail_sign_condition_at_both_ends():
    params = PhysicalParams(sigma1=2.0, sigma2=1.0)
    record = classify(builtin_profile("parabola_touch", params, 64))
    assert record.classification == AdmissibilityClass.INADMISSIBLE
    assert len(record.reasons) == 2
    assert any("+L" in reason for reason in record.reasons)
    assert any("-L" in reason for reason in record.reasons)
    assert not record.admissible


def test_sagging_cosine_is_admissible_rising_one_is_not(make_profile):
    assert classify(make_profile("cosine(-0.5)", 64)).classification == AdmissibilityClass.INTERIOR_S
    assert classify(make_profile("cosine(0.5)", 64)).classification == AdmissibilityClass.INADMISSIBLE


def test_classify_needs_five_samples(params):
    profile = Profile.from_samples(params, np.zeros(4))
    with pytest.raises(ProfileError):
        classify(profile)


@pytest.mark.parametrize("name", FAMILY)
@pytest.mark.parametrize("nx", [8, 16, 32, 64])
def test_classification_is_stable_under_refinement(make_profile, name, nx):
    assert classify(make_profile(name, nx)).classification == classify(make_profile(name, 2 * nx)).classification


def test_bump_with_support_near_the_edge_is_admissible_on_a_coarse_grid(make_profile):
    record = classify(make_profile("bump(0.4,0.6)", 8))
    assert record.classification == AdmissibilityClass.INTERIOR_S
    assert record.slope_right == 0.0
    assert record.slope_left == 0.0


def test_sampled_profiles_use_one_sided_endpoint_differences(params):
    x = np.linspace(-1.0, 1.0, 9)
    profile = Profile.from_samples(params, x**2 - 1.0)
    assert not profile.analytic_slopes
    record = classify(profile)
    # the 3-point stencil is exact for quadratics
    assert record.slope_right == pytest.approx(2.0)
    assert record.slope_left == pytest.approx(-2.0)


def test_perturbation_keeps_analytic_slopes_only_when_both_are_analytic(make_profile, params):
    base = make_profile("flat", 16)
    direction = make_profile("cosine(-0.5)", 16)
    assert base.perturbed(direction, 0.5).analytic_slopes
    sampled = Profile.from_samples(params, direction.u)
    assert not base.perturbed(sampled, 0.5).analytic_slopes


def test_non_uniform_grid_is_rejected(params):
    x = np.array([-1.0, -0.5, 0.1, 0.5, 1.0])
    with pytest.raises(ProfileError, match="uniform"):
        Profile.from_samples(params, np.zeros(5), x=x)


def test_profile_must_vanish_at_the_ends(params):
    u = np.zeros(9)
    u[-1] = 1e-3
    with pytest.raises(ProfileError, match="vanish"):
        Profile.from_samples(params, u)


def test_penetrating_profile_is_rejected(params):
    u = np.zeros(9)
    u[4] = -1.5
    with pytest.raises(ProfileError, match="ground plate"):
        Profile.from_samples(params, u)


def test_samples_just_below_the_plate_are_clamped(params):
    u = np.zeros(9)
    u[4] = -1.0 - 1e-12
    profile = Profile.from_samples(params, u)
    assert profile.u[4] == -1.0


def test_finite_difference_derivatives_of_a_quadratic(params):
    x = np.linspace(-1.0, 1.0, 33)
    profile = Profile.from_samples(params, 0.5 * (x**2 - 1.0))
    np.testing.assert_allclose(profile.du, x, atol=1e-12)
    np.testing.assert_allclose(profile.d2u, np.ones_like(x), atol=1e-9)


def test_flat_norms_vanish(make_profile):
    assert tuple(profile_norms(make_profile("flat", 32))) == (0.0, 0.0, 0.0)


def test_parabola_h2_norm(make_profile):
    norms = profile_norms(make_profile("parabola_touch", 1024))
    assert norms.h2**2 == pytest.approx(16.0 / 15.0 + 8.0 / 3.0 + 8.0, rel=1e-6)
    assert norms.l_inf == pytest.approx(1.0)


def test_cosine_sup_norm(make_profile):
    assert profile_norms(make_profile("cosine(-0.5)", 64)).l_inf == pytest.approx(0.5)


def test_domain_summary_flat(make_profile):
    summary = build_domain_summary(make_profile("flat", 16))
    assert tuple(summary) == pytest.approx((2.0, 2.0, 2.0, 1.0))


def test_domain_summary_parabola(make_profile):
    summary = build_domain_summary(make_profile("parabola_touch", 1024))
    assert summary.area_lower == pytest.approx(2.0 / 3.0, abs=1e-5)
    assert summary.area_upper == pytest.approx(2.0)
    assert summary.M == pytest.approx(2.0)


def test_sigma_equality_is_warned(caplog):
    with caplog.at_level(logging.WARNING, logger="geometry"):
        PhysicalParams(sigma1=1.5, sigma2=1.5)
    assert "no material jump" in caplog.text


@pytest.mark.parametrize("field", ["L", "H", "d", "V", "sigma1", "sigma2"])
def test_non_positive_parameters_are_rejected(field):
    with pytest.raises(ValidationError):
        PhysicalParams(**{field: 0.0})


def test_map_T1_sends_plate_and_interface_to_the_unit_strip(make_profile):
    profile = make_profile("flat", 16)
    assert map_T1(profile, 0.3, -1.0) == (0.3, 0.0)
    assert map_T1(profile, 0.3, -0.5) == (0.3, 0.5)
    assert map_T1(profile, 0.3, 0.0) == (0.3, 1.0)


def test_map_T1_refuses_collapsed_columns(make_profile):
    with pytest.raises(CollapseError):
        map_T1(make_profile("parabola_touch", 16), 0.0, -1.0)


def test_maps_round_trip(make_profile, rng):
    profile = make_profile("cosine(-0.5)", 64)
    x = rng.uniform(-1.0, 1.0, 100)
    eta1 = rng.uniform(0.0, 1.0, 100)
    eta2 = rng.uniform(1.0, 2.0, 100)

    _, z1 = map_T1_inverse(profile, x, eta1)
    _, back1 = map_T1(profile, x, z1)
    _, z2 = map_T2_inverse(profile, x, eta2)
    _, back2 = map_T2(profile, x, z2)
    np.testing.assert_allclose(back1, eta1, atol=1e-14)
    np.testing.assert_allclose(back2, eta2, atol=1e-14)


def test_perturbation_of_flat_by_cosine(make_profile):
    base = make_profile("flat", 32)
    direction = make_profile("cosine(-0.5)", 32)
    half = base.perturbed(direction, 0.5)
    np.testing.assert_allclose(half.u, make_profile("cosine(-0.25)", 32).u, atol=1e-15)


def test_perturbation_needs_a_common_grid(make_profile):
    with pytest.raises(ProfileError, match="different grid"):
        make_profile("flat", 32).perturbed(make_profile("cosine(-0.5)", 16), 1.0)
