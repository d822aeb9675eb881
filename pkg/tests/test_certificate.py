import math

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from kmr.certificate import (
    Certificate,
    WitnessSettings,
    build_recipe,
    canonicalize_dual,
    certify_recovery,
    concentration_check,
    default_probe,
    dual_feasibility,
    dual_from_certificate,
    impossibility_witness,
    lemma_geometry_check,
    one_dim_gamma,
    primal_residual,
    verify_certificate,
)
from kmr.errors import DomainError, InfeasibleClusteringError, RecipeInapplicableError
from kmr.instance import Clustering, build_balls, generate, layout_centers
from kmr.measures import make_ball, uniform_ball


# ── verify_certificate ──────────────────────────────────────

def test_collinear_strict_certificate(collinear_points, collinear_clustering):
    cert = Certificate(np.full(6, 1.5))
    verdict = verify_certificate(collinear_points, collinear_clustering, cert)
    assert verdict.implies == "unique_optimum"
    assert verdict.cond_a.holds
    assert verdict.cond_b.margin == pytest.approx(0.5)
    assert verdict.cond_c.margin == pytest.approx(0.5)
    assert verdict.cond_d.margin == pytest.approx(7.5)


def test_collinear_unit_alpha_is_only_weak(collinear_points, collinear_clustering):
    verdict = verify_certificate(collinear_points, collinear_clustering, Certificate(np.ones(6)))
    assert verdict.implies == "optimum"
    assert verdict.cond_b.status == "holds_weak"
    assert verdict.cond_c.status == "holds_weak"


def test_small_alpha_fails_coverage(collinear_points, collinear_clustering):
    verdict = verify_certificate(collinear_points, collinear_clustering, Certificate(np.full(6, 0.5)))
    assert verdict.cond_c.status == "fails"
    assert verdict.implies == "nothing"


def test_unequal_contributions_fail_a(collinear_points, collinear_clustering):
    cert = Certificate.from_cluster_alpha(collinear_clustering, [1.5, 2.0])
    verdict = verify_certificate(collinear_points, collinear_clustering, cert)
    assert verdict.cond_a.status == "fails"
    assert verdict.implies == "nothing"


def test_ledger_layout(collinear_points, collinear_clustering):
    ledger = verify_certificate(collinear_points, collinear_clustering, Certificate(np.full(6, 1.5))).ledger()
    assert set(ledger["conditions"]) == {"a", "b", "c", "d"}
    assert ledger["implies"] == "unique_optimum"
    assert ledger["tolerance"] > 0


def test_certificate_validation(collinear_points, collinear_clustering):
    with pytest.raises(DomainError):
        Certificate(np.array([1.0, math.nan]))
    with pytest.raises(DomainError):
        Certificate.from_cluster_alpha(collinear_clustering, [1.0, 1.0, 1.0])
    with pytest.raises(InfeasibleClusteringError):
        verify_certificate(collinear_points, collinear_clustering, Certificate(np.ones(5)))


def test_singletons_are_strict_when_every_point_is_a_center():
    points = np.array([[0.0], [1.0], [3.0]])
    clustering = Clustering((0, 1, 2), np.array([0, 1, 2]))
    verdict = verify_certificate(points, clustering, Certificate(np.zeros(3)))
    assert verdict.cond_b.status == "holds_strict"
    assert math.isinf(verdict.cond_b.margin)
    assert verdict.cond_c.status == "holds_weak"
    assert verdict.implies == "unique_optimum"


def test_coincident_points_are_unique(point_mass_instance):
    result = certify_recovery(point_mass_instance)
    assert result.verdict.implies == "unique_optimum"
    np.testing.assert_allclose(result.certificate.alpha_point, 1.29)


# ── dual points ─────────────────────────────────────────────

def test_dual_from_certificate_is_feasible_and_tight(collinear_points, collinear_clustering):
    dual = dual_from_certificate(collinear_points, collinear_clustering, Certificate(np.full(6, 1.5)))
    dist = cdist(collinear_points, collinear_points)
    assert dual_feasibility(dual, dist).worst <= 1e-12
    assert dual.omega == pytest.approx(2.5)
    assert dual.objective(2) == pytest.approx(4.0)


def test_canonical_beta_keeps_objective(collinear_points, collinear_clustering):
    dist = cdist(collinear_points, collinear_points)
    dual = dual_from_certificate(collinear_points, collinear_clustering, Certificate(np.full(6, 1.5)))
    again = canonicalize_dual(dual, dist)
    np.testing.assert_allclose(again.beta, dual.beta)
    assert again.objective(2) == dual.objective(2)


def test_primal_residual_of_integral_point():
    y = np.array([0, 1, 0, 0, 1, 0], dtype=float)
    z = np.zeros((6, 6))
    z[1, :3] = 1.0
    z[4, 3:] = 1.0
    assert primal_residual(y, z, 2) == 0.0
    z[1, 0] = 0.5
    assert primal_residual(y, z, 2) == pytest.approx(0.5)


# ── recipe ──────────────────────────────────────────────────

def test_symmetric_pair_prefers_alpha_1_29(pair_instance):
    recipe = build_recipe(pair_instance)
    assert recipe.applicable
    lo, hi = recipe.interval
    assert lo == pytest.approx(1 / 3)
    assert hi == pytest.approx(2.5 - 2 / 3)
    assert lo < recipe.gamma < hi
    np.testing.assert_allclose(recipe.base_alpha, 1.29, atol=1e-9)
    np.testing.assert_allclose(recipe.alpha, recipe.base_alpha + recipe.corrections)


def test_recipe_rejects_gamma_outside_interval(pair_instance):
    recipe = build_recipe(pair_instance, gamma=5.0)
    assert not recipe.applicable
    with pytest.raises(RecipeInapplicableError):
        certify_recovery(pair_instance, gamma=5.0)


def test_recipe_needs_three_points_per_cluster():
    balls = build_balls(layout_centers("pair", 2, 4.0), uniform_ball(2))
    recipe = build_recipe(generate(balls, 2, seed=0))
    assert not recipe.applicable
    assert "at least 3" in recipe.reason


def test_recipe_refuses_touching_balls():
    # D - E <= r - E once the centres are only 2r apart
    balls = build_balls(layout_centers("pair", 2, 2.0), uniform_ball(2))
    assert not build_recipe(generate(balls, 10, seed=0)).applicable


def test_single_ball_gamma():
    ball = make_ball([0.0], uniform_ball(1))
    assert one_dim_gamma([ball]) == pytest.approx(1.5)
    recipe = build_recipe(generate([ball], 20, seed=4))
    assert recipe.gamma == pytest.approx(1.5)


# ── impossibility witness ───────────────────────────────────

def test_witness_needs_two_balls():
    instance = generate([make_ball([0.0, 0.0], uniform_ball(2))], 10, seed=0)
    assert impossibility_witness(instance).status == "inconclusive"


def test_witness_needs_concentrated_medians(pair_instance):
    result = impossibility_witness(pair_instance, settings=WitnessSettings(median_tolerance=1e-9))
    assert result.status == "inconclusive"
    assert "median offset" in result.reason


def test_witness_needs_a_sample_near_the_probe(pair_instance):
    settings = WitnessSettings(median_tolerance=10.0, probe_radius=1e-9)
    result = impossibility_witness(pair_instance, settings=settings)
    assert result.status == "inconclusive"
    assert "probe" in result.reason


def test_default_probe_points_at_nearest_ball(pair_instance):
    probe = default_probe(pair_instance, 0.01)
    np.testing.assert_allclose(probe, [0.99, 0.0])


def test_witness_reports_bounds(pair_instance):
    settings = WitnessSettings(median_tolerance=10.0, probe_radius=10.0)
    result = impossibility_witness(pair_instance, settings=settings)
    assert len(result.cluster_bounds) == 2
    assert result.upper == pytest.approx(min(result.cluster_bounds))
    assert result.lower >= 0.0


# ── geometry / concentration checks ─────────────────────────

def test_geometry_check_holds_inside_admissible_box():
    balls = build_balls(layout_centers("pair", 2, 3.5), uniform_ball(2))
    check = lemma_geometry_check(balls, [1.2, 1.2], [1.4, 1.4], samples=200, seed=2)
    np.testing.assert_allclose(check.tau, [0.2, 0.2])
    assert check.checked == 400
    assert check.holds


def test_geometry_check_rejects_box_below_radius():
    balls = build_balls(layout_centers("pair", 2, 3.5), uniform_ball(2))
    with pytest.raises(DomainError):
        lemma_geometry_check(balls, [0.9, 1.2], [1.4, 1.4], samples=10, seed=0)


def test_concentration_stays_in_the_ball(pair_instance):
    result = concentration_check(pair_instance, [1.29, 1.29], xi=0.01, radius=1.0, seed=1)
    assert result.worst_offsets.shape == (2,)
    assert result.holds
