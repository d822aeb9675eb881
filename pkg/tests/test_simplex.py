import numpy as np
import pytest
from scipy.optimize import linprog

from kmr.errors import DomainError, SolverError
from kmr.simplex import RevisedSimplex, SimplexSettings


def _reference(A, b, c):
    res = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


def test_slack_basis_problem():
    # min -x1 - x2  s.t.  x1 + x2 <= 4,  x1 + 3 x2 <= 6
    A = np.array([[1.0, 1.0, 1.0, 0.0], [1.0, 3.0, 0.0, 1.0]])
    b = np.array([4.0, 6.0])
    c = np.array([-1.0, -1.0, 0.0, 0.0])
    result = RevisedSimplex(A, b, c).solve()
    assert result.objective == pytest.approx(-4.0)
    np.testing.assert_allclose(A @ result.x, b, atol=1e-12)


def test_phase_one_with_artificials():
    A = np.array([[1.0, 1.0, 1.0], [1.0, -1.0, 0.0]])
    b = np.array([1.0, 0.0])
    c = np.array([1.0, 2.0, 3.0])
    result = RevisedSimplex(A, b, c).solve()
    assert result.objective == pytest.approx(1.5)
    np.testing.assert_allclose(result.x, [0.5, 0.5, 0.0], atol=1e-12)
    # strong duality
    assert result.duals @ b == pytest.approx(1.5)


@pytest.mark.parametrize("seed", range(8))
def test_matches_highs_on_random_feasible_lps(seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.0, 1.0, (5, 12))
    b = A @ rng.uniform(0.0, 1.0, 12)
    c = rng.uniform(0.1, 2.0, 12)
    result = RevisedSimplex(A, b, c).solve()
    assert result.objective == pytest.approx(_reference(A, b, c), rel=1e-8, abs=1e-10)
    assert np.all(result.x >= 0)
    np.testing.assert_allclose(A @ result.x, b, atol=1e-8)
    assert result.duals @ b == pytest.approx(result.objective, rel=1e-8, abs=1e-10)


def test_degenerate_problem_with_bland_fallback():
    # a classic cycling example for Dantzig pricing without anti-cycling
    A = np.array([
        [1.0, 0.0, 0.0, 0.25, -8.0, -1.0, 9.0],
        [0.0, 1.0, 0.0, 0.5, -12.0, -0.5, 3.0],
        [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0],
    ])
    b = np.array([0.0, 0.0, 1.0])
    c = np.array([0.0, 0.0, 0.0, -0.75, 20.0, -0.5, 6.0])
    settings = SimplexSettings(degenerate_factor=1)
    result = RevisedSimplex(A, b, c, settings).solve()
    assert result.objective == pytest.approx(_reference(A, b, c), abs=1e-10)


def test_frequent_refactorization_gives_same_answer():
    rng = np.random.default_rng(11)
    A = rng.uniform(0.0, 1.0, (6, 14))
    b = A @ rng.uniform(0.0, 1.0, 14)
    c = rng.uniform(0.1, 2.0, 14)
    loose = RevisedSimplex(A, b, c).solve()
    tight = RevisedSimplex(A, b, c, SimplexSettings(refactor_interval=1)).solve()
    assert tight.objective == pytest.approx(loose.objective, rel=1e-10)


def test_infeasible_problem():
    A = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(SolverError, match="infeasible"):
        RevisedSimplex(A, np.array([1.0, 2.0]), np.array([1.0, 1.0])).solve()


def test_unbounded_problem():
    A = np.array([[1.0, -1.0]])
    with pytest.raises(SolverError, match="unbounded"):
        RevisedSimplex(A, np.array([1.0]), np.array([-1.0, 0.0])).solve()


def test_iteration_limit():
    rng = np.random.default_rng(5)
    A = rng.uniform(0.0, 1.0, (5, 12))
    b = A @ rng.uniform(0.0, 1.0, 12)
    with pytest.raises(SolverError, match="iteration limit"):
        RevisedSimplex(A, b, rng.uniform(0.1, 2.0, 12), SimplexSettings(max_iterations=1)).solve()


def test_input_validation():
    A = np.eye(2)
    with pytest.raises(DomainError):
        RevisedSimplex(A, np.array([1.0, -1.0]), np.zeros(2))
    with pytest.raises(DomainError):
        RevisedSimplex(A, np.array([1.0]), np.zeros(2))
