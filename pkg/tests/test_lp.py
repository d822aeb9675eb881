import numpy as np
import pytest
from scipy.spatial.distance import cdist

from kmr.certificate import canonicalize_dual, certify_recovery, complementary_slackness, dual_feasibility
from kmr.errors import DomainError, KmrError, SizeGuardError
from kmr.instance import Instance, brute_force_ip, build_balls, generate, layout_centers
from kmr.lp import LpSettings, build, decide_recovery, solve
from kmr.measures import make_ball, uniform_ball

SIMPLEX = LpSettings(backend="simplex")
HIGHS = LpSettings(backend="highs")


# ── model ───────────────────────────────────────────────────

def test_model_dimensions(collinear_points):
    model = build(collinear_points, k=2)
    assert model.N == 6
    assert model.n_variables == 42
    assert model.n_constraints == 43
    assert model.z_index(2, 3) == 6 + 2 * 6 + 3
    A, b, c = model.standard_form()
    assert A.shape == (43, 42 + 36)
    assert b.shape == (43,)
    assert c.shape == (78,)


def test_build_checks_k(collinear_points):
    with pytest.raises(DomainError):
        build(collinear_points, k=0)
    with pytest.raises(DomainError):
        build(collinear_points, k=7)
    with pytest.raises(DomainError):
        build(collinear_points)


# ── solving ─────────────────────────────────────────────────

@pytest.mark.parametrize("settings", [SIMPLEX, HIGHS], ids=["simplex", "highs"])
def test_collinear_objective(collinear_points, settings):
    solution, dual = solve(build(collinear_points, k=2), settings)
    assert solution.objective == pytest.approx(4.0, abs=1e-9)
    assert solution.integrality_gap() < 1e-9
    np.testing.assert_allclose(solution.y, [0, 1, 0, 0, 1, 0], atol=1e-9)
    assert dual.objective(2) == pytest.approx(4.0, abs=1e-7)


def test_single_center_is_the_median(collinear_points):
    solution, _ = solve(build(collinear_points, k=1), SIMPLEX)
    assert solution.objective == pytest.approx(30.0)


def test_every_point_a_center(collinear_points):
    solution, _ = solve(build(collinear_points, k=6), SIMPLEX)
    assert solution.objective == pytest.approx(0.0, abs=1e-12)


def test_auto_backend_follows_size(collinear_points):
    solution, _ = solve(build(collinear_points, k=2), LpSettings(simplex_limit=3))
    assert solution.backend == "highs"
    solution, _ = solve(build(collinear_points, k=2))
    assert solution.backend == "simplex"


def test_size_guard(collinear_points):
    with pytest.raises(SizeGuardError):
        solve(build(collinear_points, k=2), LpSettings(size_guard=5))


@pytest.mark.parametrize("seed", range(6))
def test_relaxation_bounds_the_integer_optimum(seed):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(4, 9))
    k = int(rng.integers(1, 4))
    points = rng.uniform(0.0, 5.0, (N, 2))
    model = build(points, k=k)
    by_simplex, dual = solve(model, SIMPLEX)
    by_highs, _ = solve(model, HIGHS)
    best = brute_force_ip(points, k).objective
    assert by_simplex.objective <= best + 1e-9
    assert by_simplex.objective == pytest.approx(by_highs.objective, rel=1e-7, abs=1e-9)
    assert dual.objective(k) == pytest.approx(by_simplex.objective, rel=1e-7, abs=1e-9)
    assert dual_feasibility(dual, model.dist).worst < 1e-7


def test_highs_duals_are_feasible(collinear_points):
    model = build(collinear_points, k=2)
    _, dual = solve(model, HIGHS)
    assert dual_feasibility(dual, model.dist).worst < 1e-6


def test_simplex_pair_satisfies_slackness(collinear_points):
    model = build(collinear_points, k=2)
    solution, dual = solve(model, SIMPLEX)
    report = complementary_slackness(model.dist, 2, solution, dual)
    assert report.optimal
    assert abs(report.gap) < 1e-8


# ── recovery decision ───────────────────────────────────────

def test_point_masses_are_certified(point_mass_instance):
    verdict = decide_recovery(point_mass_instance)
    assert verdict.status == "achieved"
    assert verdict.method == "certificate"
    assert verdict.uniqueness == "proven"


def test_separated_pair_recovered_by_lp(small_pair_instance):
    verdict = decide_recovery(small_pair_instance, use_certificate=False)
    assert verdict.status == "achieved"
    assert verdict.method == "lp"
    assert verdict.uniqueness in {"proven", "accepted"}
    assert verdict.ari == pytest.approx(1.0)


def test_mislabelled_points_give_wrong_partition(collinear_points):
    measure = uniform_ball(1)
    balls = [make_ball([1.0], measure), make_ball([11.0], measure)]
    instance = Instance.from_points(collinear_points, [0, 0, 0, 0, 1, 1], balls)
    verdict = decide_recovery(instance, use_certificate=False)
    assert verdict.status == "failed_wrong_partition"
    assert verdict.ari < 1.0


def test_oversized_instance_is_undecided(small_pair_instance):
    verdict = decide_recovery(small_pair_instance, LpSettings(size_guard=5), use_certificate=False)
    assert verdict.status == "undecided"
    assert "size guard" in verdict.evidence["reason"]


def test_canonical_lp_dual_meets_slackness(small_pair_instance):
    model = build(small_pair_instance)
    solution, dual = solve(model, SIMPLEX)
    report = complementary_slackness(model.dist, model.k, solution, canonicalize_dual(dual, model.dist))
    assert report.optimal


def test_certificate_verdict_carries_its_lp_point(point_mass_instance):
    verdict = decide_recovery(point_mass_instance)
    solution, dual = verdict.lp
    assert solution.backend == "certificate"
    dist = cdist(point_mass_instance.points, point_mass_instance.points)
    report = complementary_slackness(dist, point_mass_instance.k, solution, dual)
    assert report.optimal
    assert abs(report.gap) < 1e-9


def test_lp_verdict_carries_the_solved_point(small_pair_instance):
    verdict = decide_recovery(small_pair_instance, use_certificate=False)
    solution, _ = verdict.lp
    assert solution.backend == "simplex"
    assert verdict.evidence["objective"] == solution.objective


def test_unique_certificates_are_sound():
    # a strict certificate must agree with the integer optimum, the LP vertex
    # and the recovery decision
    rng = np.random.default_rng(7)
    certified = 0
    for trial in range(100):
        delta = float(rng.uniform(2.5, 5.0))
        n = int(rng.integers(3, 7))
        balls = build_balls(layout_centers("pair", 2, delta), uniform_ball(2))
        instance = generate(balls, n, seed=trial)
        try:
            result = certify_recovery(instance)
        except KmrError:
            continue
        if result.verdict.implies != "unique_optimum":
            continue
        certified += 1
        truth = result.solution
        best = brute_force_ip(instance.points, instance.k)
        assert truth.objective <= best.objective + 1e-9
        assert set(best.clustering.centers) == set(truth.clustering.centers)

        solution, _ = solve(build(instance), HIGHS)
        y = np.zeros(instance.size)
        y[list(truth.clustering.centers)] = 1.0
        z = np.zeros((instance.size, instance.size))
        z[truth.clustering.center_of(), np.arange(instance.size)] = 1.0
        np.testing.assert_allclose(solution.y, y, atol=1e-7)
        np.testing.assert_allclose(solution.z, z, atol=1e-7)

        assert decide_recovery(instance, HIGHS).status == "achieved"
    assert certified > 0
