import dataclasses

import numpy as np
import pytest
from scipy.sparse import csr_matrix

from boundary import LiftSpec, eval_h
from config import SolverSettings
from conftest import FAMILY
from diagnostics import two_layer_flat_solution
from errors import ConvergenceError, InadmissibleProfileError, NegativeCurvatureError
from geometry import PhysicalParams
from mesh import NodeTag, build_mesh
from profiles import builtin_profile
from solver import (
    Field,
    FieldKind,
    FieldTable,
    assemble,
    dirichlet_energy,
    dirichlet_mask,
    h1_norm,
    lift_field,
    reconstruct_psi,
    run_solve,
    solution_energy,
    solve_cg,
)


def _system(profile, n1, n2, lateral_bc="lift"):
    mesh = build_mesh(profile, n1, n2)
    lift = LiftSpec.from_params(profile.params)
    return mesh, lift, assemble(mesh, lift, profile, lateral_bc=lateral_bc)


def test_single_free_node_stiffness():
    params = PhysicalParams(sigma1=1.0, sigma2=1.0)
    _, _, system = _system(builtin_profile("flat", params, 2), 1, 1)
    np.testing.assert_array_equal(system.free, [4])
    assert system.matrix.toarray() == pytest.approx(np.array([[8.0 / 3.0]]))


def test_unit_square_element_stiffness_entries():
    params = PhysicalParams(sigma1=1.0, sigma2=1.0)
    mesh, _, system = _system(builtin_profile("flat", params, 2), 1, 1)
    A = system.full_matrix.toarray()
    corner = mesh.node_id(0, 0)
    assert A[corner, corner] == pytest.approx(2.0 / 3.0)
    assert A[corner, mesh.node_id(1, 0)] == pytest.approx(-1.0 / 6.0)
    assert A[corner, mesh.node_id(0, 1)] == pytest.approx(-1.0 / 6.0)
    assert A[corner, mesh.node_id(1, 1)] == pytest.approx(-1.0 / 3.0)


@pytest.mark.parametrize("name", FAMILY)
def test_stiffness_is_symmetric_with_zero_row_sums(make_profile, name):
    _, _, system = _system(make_profile(name, 16), 4, 4)
    A = system.full_matrix
    scale = abs(A).max()
    assert abs(A - A.T).max() <= 1e-13 * scale
    np.testing.assert_allclose(np.asarray(A.sum(axis=1)).ravel(), 0.0, atol=1e-12 * scale)


def test_reduced_diagonal_is_positive(make_profile):
    _, _, system = _system(make_profile("parabola_touch", 16), 4, 4)
    assert np.all(system.matrix.diagonal() > 0.0)


def test_load_lives_on_the_plate(make_profile):
    mesh, _, system = _system(make_profile("flat", 8), 4, 4)
    below = mesh.node_layer == 1
    np.testing.assert_array_equal(system.full_rhs[below], 0.0)
    assert np.any(system.full_rhs[mesh.node_layer == 2] != 0.0)


def test_dirichlet_mask_modes(make_profile):
    mesh = build_mesh(make_profile("flat", 4), 2, 2)
    tags = mesh.node_tags
    side = tags == NodeTag.SIDE
    assert np.all(dirichlet_mask(mesh, "lift")[side])
    assert not np.any(dirichlet_mask(mesh, "insulated")[side])
    assert np.all(dirichlet_mask(mesh, "insulated")[(tags == NodeTag.TOP) | (tags == NodeTag.BOTTOM)])
    with pytest.raises(ValueError):
        dirichlet_mask(mesh, "periodic")


def test_zero_load_gives_zero_iterations(make_profile):
    _, _, system = _system(make_profile("flat", 8), 4, 4)
    silent = dataclasses.replace(system, rhs=np.zeros_like(system.rhs))
    chi, stats = solve_cg(silent, 1e-10, 100)
    assert stats.iterations == 0
    assert not np.any(chi.values)


def test_one_unknown_system(make_profile):
    mesh, _, system = _system(make_profile("flat", 2), 1, 1)
    tiny = dataclasses.replace(system, matrix=csr_matrix(np.array([[4.0]])), rhs=np.array([2.0]), free=np.array([4]))
    chi, stats = solve_cg(tiny, 1e-12, 10)
    assert chi.values[4] == pytest.approx(0.5)
    assert stats.iterations == 1
    assert np.count_nonzero(chi.values) == 1
    assert chi.kind == FieldKind.CHI


def test_negative_diagonal_is_refused(make_profile):
    _, _, system = _system(make_profile("flat", 2), 1, 1)
    broken = dataclasses.replace(system, matrix=csr_matrix(np.array([[-1.0]])), rhs=np.array([1.0]), free=np.array([4]))
    with pytest.raises(NegativeCurvatureError):
        solve_cg(broken, 1e-10, 10)


def test_iteration_cap_raises_with_residual(make_profile):
    _, _, system = _system(make_profile("cosine(-0.5)", 16), 8, 8)
    with pytest.raises(ConvergenceError) as info:
        solve_cg(system, 1e-14, 1)
    assert info.value.iterations == 1
    assert info.value.residual > 1e-14


def test_flat_case_is_nodally_exact(make_profile, flat_settings):
    result = run_solve(make_profile("flat", 64), flat_settings, 64, 64)
    exact = two_layer_flat_solution(result.mesh.profile.params)
    assert np.max(np.abs(result.psi.values - exact.psi(result.mesh.node_z))) <= 1e-6
    interface = result.psi.grid[:, 64]
    np.testing.assert_allclose(interface, 2.0 / 3.0, atol=1e-6)
    assert result.report.energy_psi == pytest.approx(2.0 / 3.0, abs=1e-3)
    assert 0 < result.report.cg_iters < flat_settings.max_iter


def test_flat_case_with_one_free_level_takes_one_iteration(make_profile, flat_settings):
    result = run_solve(make_profile("flat", 16), flat_settings, 1, 1)
    assert result.report.cg_iters == 1


@pytest.mark.parametrize(("n1", "n2"), [(2, 2), (4, 4), (2, 6), (8, 8)])
def test_flat_case_iterations_are_bounded_by_the_free_levels(make_profile, flat_settings, n1, n2):
    # x-invariant data on insulated sides keeps every Krylov vector x-invariant
    result = run_solve(make_profile("flat", 16), flat_settings, n1, n2)
    assert 0 < result.report.cg_iters <= n1 + n2 - 1


def test_iteration_counts_repeat_exactly(make_profile, lift_settings):
    first = run_solve(make_profile("cosine(-0.5)", 32), lift_settings, 16, 16)
    second = run_solve(make_profile("cosine(-0.5)", 32), lift_settings, 16, 16)
    assert first.report.cg_iters == second.report.cg_iters
    np.testing.assert_array_equal(first.psi.values, second.psi.values)


def test_flat_closed_form():
    exact = two_layer_flat_solution(PhysicalParams())
    assert exact.slope_lower == pytest.approx(2.0 / 3.0)
    assert exact.slope_upper == pytest.approx(1.0 / 3.0)
    assert exact.interface_value == pytest.approx(2.0 / 3.0)
    assert exact.energy == pytest.approx(2.0 / 3.0)
    assert exact.psi(np.array([-1.0, 0.0, 1.0])) == pytest.approx([0.0, 2.0 / 3.0, 1.0])
    assert exact.gradient_z(np.array([-0.5, 0.5])) == pytest.approx([2.0 / 3.0, 1.0 / 3.0])


def test_interpolated_flat_solution_energy(make_profile):
    mesh = build_mesh(make_profile("flat", 8), 4, 4)
    exact = two_layer_flat_solution(mesh.profile.params)
    psi = Field.from_function(mesh, lambda x, z: exact.psi(z))
    assert dirichlet_energy(psi) == pytest.approx(2.0 / 3.0, rel=1e-12)


def test_interpolated_lift_energy_converges_at_second_order(make_profile):
    errors = []
    for n in (16, 32, 64):
        profile = make_profile("flat", n)
        mesh = build_mesh(profile, n, n)
        lift = LiftSpec.from_params(profile.params)
        h = Field.from_function(mesh, lambda x, z: eval_h(lift, profile, x, z), kind=FieldKind.H)
        errors.append(8.0 / 3.0 - dirichlet_energy(h))
    assert errors[-1] <= 1e-3
    assert errors[0] / errors[1] == pytest.approx(4.0, rel=1e-6)
    assert errors[1] / errors[2] == pytest.approx(4.0, rel=1e-6)


def test_zero_chi_energy_is_the_lift_energy(make_profile):
    mesh = build_mesh(make_profile("flat", 8), 4, 4)
    lift = LiftSpec.from_params(mesh.profile.params)
    assert solution_energy(Field.zeros(mesh), lift) == pytest.approx(8.0 / 3.0, rel=1e-12)


@pytest.mark.parametrize("name", FAMILY)
@pytest.mark.parametrize("level", [8, 16, 32])
def test_discrete_minimality(make_profile, lift_settings, name, level):
    result = run_solve(make_profile(name, level), lift_settings, level, level)
    report = result.report
    assert report.energy_psi <= report.energy_h * (1.0 + 10.0 * lift_settings.cg_tol)
    assert report.energy_psi > 0.0


def test_galerkin_orthogonality(make_profile, rng):
    profile = make_profile("cosine(-0.5)", 16)
    _, _, system = _system(profile, 8, 8)
    chi, _ = solve_cg(system, 1e-12, 10000)
    theta = rng.standard_normal(system.n_free)
    residual = theta @ (system.matrix @ chi.values[system.free] - system.rhs)
    assert abs(residual) <= 1e-9 * np.linalg.norm(theta) * np.linalg.norm(system.rhs)


def test_solution_does_not_depend_on_the_initial_guess(make_profile, rng):
    profile = make_profile("bump(0.4,0.6)", 16)
    _, _, system = _system(profile, 16, 16)
    first, _ = solve_cg(system, 1e-12, 10000)
    second, _ = solve_cg(system, 1e-12, 10000, x0=rng.standard_normal(system.n_free))
    scale = np.max(np.abs(first.values))
    assert np.max(np.abs(first.values - second.values)) <= 1e-6 * scale


def test_equal_permittivity_scale_drops_out(make_profile):
    profile_one = builtin_profile("cosine(-0.5)", PhysicalParams(sigma1=1.0, sigma2=1.0), 16)
    profile_three = builtin_profile("cosine(-0.5)", PhysicalParams(sigma1=3.0, sigma2=3.0), 16)
    settings = SolverSettings(cg_tol=1e-12)
    one = run_solve(profile_one, settings, 8, 8)
    three = run_solve(profile_three, settings, 8, 8)
    np.testing.assert_allclose(one.psi.values, three.psi.values, atol=1e-8)
    assert three.report.energy_psi == pytest.approx(3.0 * one.report.energy_psi, rel=1e-8)


@pytest.mark.parametrize("name", FAMILY)
def test_reconstruction_pins_plates(make_profile, lift_settings, name):
    result = run_solve(make_profile(name, 16), lift_settings, 8, 8)
    tags = result.mesh.node_tags
    assert np.all(result.psi.values[tags == NodeTag.TOP] == 1.0)
    assert np.all(result.psi.values[tags == NodeTag.BOTTOM] == 0.0)


def test_reconstruction_needs_chi(make_profile):
    mesh = build_mesh(make_profile("flat", 4), 2, 2)
    lift = LiftSpec.from_params(mesh.profile.params)
    with pytest.raises(ValueError):
        reconstruct_psi(lift_field(mesh, lift, mesh.profile), lift, mesh.profile)


@pytest.mark.parametrize("level", [16, 32, 64])
def test_contact_profile_solves_within_the_plate_potentials(make_profile, lift_settings, level):
    result = run_solve(make_profile("parabola_touch", level), lift_settings, level // 2, level // 2)
    V = result.mesh.profile.params.V
    assert result.report.admissibility.value == "BarSOnly"
    assert result.psi.values.min() >= -0.01 * V
    assert result.psi.values.max() <= 1.01 * V


def test_inadmissible_profile_is_not_solved(lift_settings):
    params = PhysicalParams(sigma1=2.0, sigma2=1.0)
    with pytest.raises(InadmissibleProfileError) as info:
        run_solve(builtin_profile("parabola_touch", params, 16), lift_settings, 4, 4)
    assert info.value.exit_code == 2
    assert info.value.admissibility.reasons


def test_wall_time_only_when_timed(make_profile, lift_settings):
    profile = make_profile("flat", 8)
    assert run_solve(profile, lift_settings, 4, 4).report.wall_time is None
    assert run_solve(profile, lift_settings, 4, 4, timing=True).report.wall_time >= 0.0


def test_zero_field_norm(make_profile):
    mesh = build_mesh(make_profile("flat", 4), 2, 2)
    assert h1_norm(Field.zeros(mesh)) == 0.0


def test_field_rejects_wrong_size(make_profile):
    mesh = build_mesh(make_profile("flat", 4), 2, 2)
    with pytest.raises(ValueError):
        Field.on_mesh(mesh, np.zeros(3), FieldKind.CHI)


def test_field_table(make_profile, lift_settings):
    result = run_solve(make_profile("cosine(-0.5)", 8), lift_settings, 4, 4)
    table = FieldTable(result.chi, result.h, result.psi)
    rows = list(table.csv_rows())
    assert table.csv_header() == ["x", "z", "layer", "chi", "h", "psi"]
    assert len(rows) == result.mesh.n_nodes
    for _, _, _, chi, h, psi in rows:
        assert psi == pytest.approx(chi + h, abs=1e-14)
