"""Metric families: closed-form values, derivative consistency, grid round trips."""

import math

import numpy as np
import pytest

from aemass.curvature import fd_consistency
from aemass.metrics import (
    GridMetric,
    RadialProfile,
    lift_grid,
    make_conformally_flat,
    make_flat,
    make_radial_perturbation,
    make_schwarzschild_isotropic,
    make_shell_profile,
    read_grid_file,
    sample_to_grid,
    write_grid_file,
)

from conftest import one_plus_power, sample_points


def test_flat_is_identity():
    g = make_flat(3)
    x = np.array([5.0, 0.0, 0.0])
    assert np.array_equal(g.eval(x), np.eye(3))
    assert np.all(g.eval_d1(x) == 0.0)
    assert np.all(g.eval_d2(x) == 0.0)
    assert g.comparability == 1.0
    assert math.isinf(g.falloff_tau)


def test_flat_determinant_n4():
    g = make_flat(4)
    pts = sample_points(g, 32, 2.0, 50.0)
    assert np.allclose(np.linalg.det(g.eval(pts)), 1.0)


def test_dimension_guard():
    with pytest.raises(ValueError):
        make_flat(2)
    with pytest.raises(ValueError):
        make_radial_perturbation(2, RadialProfile.power(0.1, 1.0))


def test_conformal_closed_form_value():
    # n=3, u = 1 + 1/(2r) at x = (2,0,0): g_11 = (1 + 1/4)^4 = 625/256.
    g = make_conformally_flat(3, RadialProfile.schwarzschild_u(3, 1.0))
    val = g.eval(np.array([2.0, 0.0, 0.0]))
    assert val[0, 0] == pytest.approx(625.0 / 256.0, rel=1e-15)
    assert val[0, 1] == 0.0


def test_conformal_with_unit_factor_is_flat():
    g = make_conformally_flat(3, RadialProfile.constant(1.0))
    pts = sample_points(g, 16, 2.5, 40.0)
    assert np.allclose(g.eval(pts), np.eye(3), atol=1e-15)
    assert np.allclose(g.eval_d1(pts), 0.0, atol=1e-15)


def test_conformal_rejects_nonpositive_factor():
    u = RadialProfile(
        eval=lambda r: 1.0 - 5.0 / np.asarray(r, float),
        eval_d1=lambda r: 5.0 / np.asarray(r, float) ** 2,
        eval_d2=lambda r: -10.0 / np.asarray(r, float) ** 3,
        decay_rate=1.0,
    )
    with pytest.raises(ValueError):
        make_conformally_flat(3, u, inner_radius=2.0)


def test_schwarzschild_zero_mass_is_flat():
    g = make_schwarzschild_isotropic(3, 0.0)
    pts = sample_points(g, 8, 2.0, 30.0)
    assert np.allclose(g.eval(pts), np.eye(3), atol=1e-15)


def test_schwarzschild_closed_form_value():
    g = make_schwarzschild_isotropic(3, 1.0)
    val = g.eval(np.array([2.0, 0.0, 0.0]))
    assert val[0, 0] == pytest.approx(2.44140625, rel=1e-15)
    assert g.falloff_tau == 1.0


def test_schwarzschild_rejects_singular_domain():
    with pytest.raises(ValueError):
        make_schwarzschild_isotropic(3, 8.0, inner_radius=2.0)  # singularity at 4
    with pytest.raises(ValueError):
        make_schwarzschild_isotropic(3, -1.0)


def test_perturbation_zero_profile_is_flat():
    g = make_radial_perturbation(3, RadialProfile.constant(0.0))
    pts = sample_points(g, 8, 2.0, 30.0)
    assert np.allclose(g.eval(pts), np.eye(3), atol=1e-15)


def test_perturbation_rejects_large_amplitude():
    with pytest.raises(ValueError):
        make_radial_perturbation(3, RadialProfile.constant(1.1))


def test_from_expression_profile_matches_power():
    p1 = RadialProfile.from_expression("0.3/r**2")
    p2 = RadialProfile.power(0.3, 2.0)
    r = np.linspace(2.0, 40.0, 17)
    assert np.allclose(p1.eval(r), p2.eval(r), rtol=1e-14)
    assert np.allclose(p1.eval_d1(r), p2.eval_d1(r), rtol=1e-14)
    assert np.allclose(p1.eval_d2(r), p2.eval_d2(r), rtol=1e-14)


@pytest.mark.parametrize(
    "factory",
    [
        lambda: make_schwarzschild_isotropic(3, 1.0),
        lambda: make_conformally_flat(4, one_plus_power(0.2, 2)),
        lambda: make_conformally_flat(5, one_plus_power(0.1, 3)),
        lambda: make_radial_perturbation(3, RadialProfile.power(0.1, 1.0)),
    ],
)
def test_analytic_derivatives_match_finite_differences(factory):
    g = factory()
    pts = sample_points(g, 40, g.inner_radius * 1.5, 60.0, seed=5)
    assert fd_consistency(g, pts) < 1e-8


@pytest.mark.parametrize(
    "factory",
    [
        lambda: make_schwarzschild_isotropic(3, 1.0),
        lambda: make_conformally_flat(4, one_plus_power(0.2, 2)),
    ],
)
def test_symmetry_and_eigenvalue_bounds(factory):
    g = factory()
    pts = sample_points(g, 200, g.inner_radius * 1.01, 500.0, seed=6)
    vals = g.eval(pts)
    assert np.max(np.abs(vals - np.swapaxes(vals, 1, 2))) <= 1e-12
    d2 = g.eval_d2(pts)
    assert np.max(np.abs(d2 - np.swapaxes(d2, 1, 2))) <= 1e-12  # k,l symmetry
    assert np.max(np.abs(d2 - np.swapaxes(d2, 3, 4))) <= 1e-12  # i,j symmetry
    ev = np.linalg.eigvalsh(vals)
    assert np.min(ev) >= 1.0 / g.comparability - 1e-12
    assert np.max(ev) <= g.comparability + 1e-12


# -- kinked shell profile ----------------------------------------------------


def test_shell_profile_continuity_and_slopes():
    prof = make_shell_profile(0.1, 0.3, n=3, r_start=2.0, shell_width=4.0, blend_radius=100.0)
    # Continuity across kinks: a genuine accounting bug would show at ~1e-4.
    for b in prof.kink_radii[1:-1]:
        left, right = prof.eval(np.array([b - 1e-9, b + 1e-9]))
        assert left == pytest.approx(right, abs=1e-10)
    # a'(r) = -2 mu(r) / r^2 with mu alternating 0.1 / 0.3 per shell.
    r_even = np.array([3.0])  # first shell [2, 6)
    r_odd = np.array([7.0])  # second shell [6, 10)
    assert prof.eval_d1(r_even)[0] == pytest.approx(-2 * 0.1 / 9.0, rel=1e-13)
    assert prof.eval_d1(r_odd)[0] == pytest.approx(-2 * 0.3 / 49.0, rel=1e-13)


def test_shell_profile_decays():
    prof = make_shell_profile(0.1, 0.3)
    r = np.array([2.0, 10.0, 100.0, 1000.0, 10000.0])
    a = prof.eval(r)
    assert np.all(np.abs(a) < 1.0)
    assert np.all(np.diff(np.abs(a)) < 0)
    assert abs(a[-1]) < 1e-3


def test_kinked_metric_regularity_tag(kinked_metric):
    assert kinked_metric.regularity == "W12_only"
    assert len(kinked_metric.kink_radii) > 10


# -- grid metrics ------------------------------------------------------------


def test_grid_flat_roundtrip(scheme):
    flat = make_flat(3, inner_radius=1.0)
    grid = sample_to_grid(flat, spacing=0.25, r_in=4.0, r_out=5.0)
    lifted = lift_grid(grid)
    pts = sample_points(lifted, 20, 4.2, 4.8, seed=7)
    assert np.allclose(lifted.eval(pts), np.eye(3), atol=1e-12)
    assert np.max(np.abs(lifted.eval_d1(pts))) < 1e-12


def test_grid_derivative_accuracy_and_convergence():
    g = make_schwarzschild_isotropic(3, 1.0)
    probe = sample_points(g, 30, 4.25, 4.55, seed=8)
    errors = {}
    for h in (0.1, 0.05):
        grid = sample_to_grid(g, spacing=h, r_in=4.1, r_out=4.7)
        lifted = lift_grid(grid)
        errors[h] = np.max(np.abs(lifted.eval_d1(probe) - g.eval_d1(probe)))
    # Second-order accurate: halving the spacing wins a factor ~4.
    assert errors[0.1] < 50 * 0.1 ** 2
    ratio = errors[0.1] / errors[0.05]
    assert 2.5 < ratio < 6.5


def test_grid_query_outside_annulus_raises():
    g = make_schwarzschild_isotropic(3, 1.0)
    grid = sample_to_grid(g, spacing=0.2, r_in=4.0, r_out=5.0)
    lifted = lift_grid(grid)
    with pytest.raises(ValueError, match="outside the sampled annulus"):
        lifted.eval(np.array([8.0, 0.0, 0.0]))


def test_grid_rejects_bad_spacing():
    g = make_flat(3)
    with pytest.raises(ValueError):
        sample_to_grid(g, spacing=-0.1, r_in=4.0, r_out=5.0)
    with pytest.raises(ValueError):
        GridMetric(dim=3, spacing=0.0, r_in=4.0, r_out=5.0,
                   coords=np.zeros((1, 3), dtype=np.int64), samples=np.ones((1, 6)))


def test_grid_file_roundtrip(tmp_path):
    g = make_schwarzschild_isotropic(3, 1.0)
    grid = sample_to_grid(g, spacing=0.25, r_in=4.0, r_out=4.8)
    path = tmp_path / "metric.grid"
    write_grid_file(path, grid)
    back = read_grid_file(path)
    assert back.dim == 3
    assert back.spacing == grid.spacing
    assert np.array_equal(back.coords, grid.coords)
    assert np.array_equal(back.samples, grid.samples)  # >= 15 significant digits


def test_grid_file_header_validation(tmp_path):
    path = tmp_path / "bad.grid"
    path.write_text("3 0.25 4.0 4.8 2\n0 0 0 1 0 0 1 0 1\n")
    with pytest.raises(ValueError, match="promises 2 records"):
        read_grid_file(path)
