"""
certificate.py
--------------
Dual certificates for the k-median LP.

An integral clustering with centres a_i and clusters A_i is LP optimal when
some alpha in R^P satisfies

  (a) C(a_1) = ... = C(a_k)
  (b) C(q) <= C(a_1) for every non-centre q
  (c) alpha_q >= d(a_i, q) for q in A_i
  (d) alpha_q <= d(a_i, q) for q outside A_i

and it is the unique optimum when (b) and (d) hold strictly. This module
checks those conditions, builds alpha from ball statistics (the recipe),
turns a certificate into an explicit dual point, checks complementary
slackness, and builds the opposite kind of evidence: a witness that no
admissible alpha exists for the ground truth.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial.distance import cdist

from kmr.errors import DomainError, InfeasibleClusteringError, RecipeInapplicableError
from kmr.gfunction import contribution_many
from kmr.instance import (
    Clustering,
    GroundTruthSolution,
    Instance,
    ground_truth,
    iter_distance_blocks,
)
from kmr.measures import BallConfig, expected_center_distance, geometry, rng_stream, uniform_ball, sample_many

if TYPE_CHECKING:
    from kmr.lp import LpSolution

logger = logging.getLogger(__name__)

STRICTNESS = 1e-9
FEASIBILITY_TOL = 1e-8
PREFERRED_ALPHA = 1.29
MIN_CLUSTER_SIZE = 3

ConditionStatus = Literal["holds", "holds_strict", "holds_weak", "fails"]
Implication = Literal["unique_optimum", "optimum", "nothing"]


# ===========================================================================
#  TYPES
# ===========================================================================

@dataclass(frozen=True, eq=False)
class Certificate:
    """Per-point alpha; `tolerance` overrides the default strictness scale."""

    alpha_point: np.ndarray
    tolerance: Optional[float] = None

    def __post_init__(self) -> None:
        alpha = np.asarray(self.alpha_point, dtype=float)
        if alpha.ndim != 1 or not np.all(np.isfinite(alpha)):
            raise DomainError("certificate entries must be a finite vector")
        object.__setattr__(self, "alpha_point", alpha)

    @classmethod
    def from_cluster_alpha(cls, clustering: Clustering, alpha: Sequence[float],
                           tolerance: Optional[float] = None) -> "Certificate":
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape != (clustering.k,):
            raise DomainError(f"need {clustering.k} cluster values, got shape {alpha.shape}")
        return cls(alpha[clustering.assignment], tolerance)


@dataclass(frozen=True)
class Condition:
    status: ConditionStatus
    margin: float

    @property
    def holds(self) -> bool:
        return self.status != "fails"

    @property
    def strict(self) -> bool:
        return self.status == "holds_strict"


@dataclass(frozen=True)
class CertificateVerdict:
    cond_a: Condition
    cond_b: Condition
    cond_c: Condition
    cond_d: Condition
    implies: Implication
    tolerance: float

    def ledger(self) -> dict:
        out = {}
        for name in ("a", "b", "c", "d"):
            cond = getattr(self, f"cond_{name}")
            out[name] = {"status": cond.status, "margin": cond.margin}
        return {"conditions": out, "implies": self.implies, "tolerance": self.tolerance}


@dataclass(frozen=True, eq=False)
class DualSolution:
    """Point of the dual LP: alpha per point, beta per ordered pair (p, q), omega."""

    alpha: np.ndarray
    beta: np.ndarray
    omega: float

    def objective(self, k: int) -> float:
        return float(self.alpha.sum() - k * self.omega)


@dataclass(frozen=True)
class DualFeasibility:
    negative_beta: float
    edge_violation: float     # max alpha_q - beta_pq - d(p, q)
    budget_violation: float   # max sum_q beta_pq - omega

    @property
    def worst(self) -> float:
        return max(self.negative_beta, self.edge_violation, self.budget_violation, 0.0)


@dataclass(frozen=True)
class SlacknessReport:
    primal_feasible: bool
    dual_feasible: bool
    primal_residual: float
    dual_residual: float
    cs1: float   # max |beta_pq (z_pq - y_p)|
    cs2: float   # max |z_pq (alpha_q - beta_pq - d(p, q))|
    cs3: float   # max |y_p (sum_q beta_pq - omega)|
    gap: float

    @property
    def optimal(self) -> bool:
        return (self.primal_feasible and self.dual_feasible
                and max(self.cs1, self.cs2, self.cs3) <= FEASIBILITY_TOL)


@dataclass(frozen=True, eq=False)
class Recipe:
    applicable: bool
    reason: str
    gamma: float
    interval: tuple[float, float]
    expected: np.ndarray        # E_i
    corrections: np.ndarray     # OPT_i / n_i - E_i
    alpha: np.ndarray           # E_i + gamma / beta_i + correction_i

    @property
    def base_alpha(self) -> np.ndarray:
        return self.alpha - self.corrections


@dataclass(frozen=True, eq=False)
class CertifiedRecovery:
    verdict: CertificateVerdict
    certificate: Certificate
    recipe: Recipe
    solution: GroundTruthSolution


class WitnessSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    eps:              float = Field(0.0003, gt=0, lt=1)
    median_tolerance: float = Field(0.05, gt=0)
    probe_radius:     float = Field(0.05, gt=0)


@dataclass(frozen=True)
class WitnessResult:
    status: Literal["proves_failure", "inconclusive"]
    reason: str
    lower: float = math.nan
    upper: float = math.nan
    margin: float = math.nan
    probe_index: int = -1
    cluster_bounds: tuple[float, ...] = field(default=())


# ===========================================================================
#  VERIFICATION
# ===========================================================================

def _classify(margin: float, tol: float) -> ConditionStatus:
    if margin > tol:
        return "holds_strict"
    if margin >= -tol:
        return "holds_weak"
    return "fails"


def _diameter(points: np.ndarray) -> float:
    diameter = 0.0
    for _, _, block in iter_distance_blocks(points, points):
        diameter = max(diameter, float(block.max()))
    return diameter


def strictness_tolerance(points: np.ndarray) -> float:
    return STRICTNESS * (1.0 + _diameter(points))


def _points(instance) -> np.ndarray:
    return instance.points if isinstance(instance, Instance) else np.asarray(instance, dtype=float)


def own_distance(points: np.ndarray, clustering: Clustering) -> np.ndarray:
    return np.linalg.norm(points - points[clustering.center_of()], axis=1)


def verify_certificate(instance, clustering: Clustering, certificate: Certificate) -> CertificateVerdict:
    """Evaluate the four optimality conditions for `clustering` under `certificate`."""
    points = _points(instance)
    N = points.shape[0]
    alpha = certificate.alpha_point
    if clustering.assignment.size != N or alpha.size != N:
        raise InfeasibleClusteringError(
            f"clustering covers {clustering.assignment.size} points, certificate {alpha.size}, instance {N}"
        )
    tol = certificate.tolerance if certificate.tolerance is not None else strictness_tolerance(points)
    centers = np.asarray(clustering.centers)

    values = contribution_many(points, alpha, points)
    at_centers = values[centers]
    spread = float(at_centers.max() - at_centers.min())
    cond_a = Condition("holds" if spread <= tol else "fails", -spread)

    # points coinciding with their own centre are the same location
    others = own_distance(points, clustering) > 0.0
    others[centers] = False
    if others.any():
        margin_b = float(at_centers.min() - values[others].max())
        cond_b = Condition(_classify(margin_b, tol), margin_b)
    else:
        cond_b = Condition("holds_strict", math.inf)

    to_centers = cdist(points, points[centers])
    own = to_centers[np.arange(N), clustering.assignment]
    margin_c = float((alpha - own).min())
    cond_c = Condition(_classify(margin_c, tol), margin_c)

    if clustering.k > 1:
        gaps = to_centers - alpha[:, None]
        gaps[np.arange(N), clustering.assignment] = np.inf
        margin_d = float(gaps.min())
        cond_d = Condition(_classify(margin_d, tol), margin_d)
    else:
        cond_d = Condition("holds_strict", math.inf)

    if cond_a.holds and cond_c.holds and cond_b.strict and cond_d.strict:
        implies: Implication = "unique_optimum"
    elif all(c.holds for c in (cond_a, cond_b, cond_c, cond_d)):
        implies = "optimum"
    else:
        implies = "nothing"
    return CertificateVerdict(cond_a, cond_b, cond_c, cond_d, implies, tol)


# ===========================================================================
#  DUAL POINTS / SLACKNESS
# ===========================================================================

def canonicalize_dual(dual: DualSolution, dist: np.ndarray) -> DualSolution:
    """Replace beta by (alpha_q - d(p, q))_+; feasibility and objective are kept."""
    beta = np.maximum(dual.alpha[None, :] - dist, 0.0)
    return DualSolution(dual.alpha.copy(), beta, dual.omega)


def dual_from_certificate(instance, clustering: Clustering, certificate: Certificate) -> DualSolution:
    """Dual point built from alpha: beta = (alpha - d)_+, omega = C(a_1)."""
    points = _points(instance)
    dist = cdist(points, points)
    alpha = certificate.alpha_point
    beta = np.maximum(alpha[None, :] - dist, 0.0)
    omega = float(beta[clustering.centers[0]].sum())
    return DualSolution(alpha.copy(), beta, omega)


def dual_feasibility(dual: DualSolution, dist: np.ndarray) -> DualFeasibility:
    return DualFeasibility(
        float(max(-dual.beta.min(), 0.0)),
        float(max((dual.alpha[None, :] - dual.beta - dist).max(), 0.0)),
        float(max((dual.beta.sum(axis=1) - dual.omega).max(), 0.0)),
    )


def primal_residual(y: np.ndarray, z: np.ndarray, k: int) -> float:
    return float(max(
        np.abs(z.sum(axis=0) - 1.0).max(),
        max((z - y[:, None]).max(), 0.0),
        abs(y.sum() - k),
        max(-z.min(), -y.min(), 0.0),
    ))


def complementary_slackness(dist: np.ndarray, k: int, primal: "LpSolution", dual: DualSolution) -> SlacknessReport:
    """Feasibility of both points, then the three slackness products."""
    y, z = primal.y, primal.z
    p_res = primal_residual(y, z, k)
    d_res = dual_feasibility(dual, dist).worst
    cs1 = float(np.abs(dual.beta * (z - y[:, None])).max())
    cs2 = float(np.abs(z * (dual.alpha[None, :] - dual.beta - dist)).max())
    cs3 = float(np.abs(y * (dual.beta.sum(axis=1) - dual.omega)).max())
    gap = float((dist * z).sum() - dual.objective(k))
    return SlacknessReport(p_res <= FEASIBILITY_TOL, d_res <= FEASIBILITY_TOL, p_res, d_res, cs1, cs2, cs3, gap)


# ===========================================================================
#  RECIPE
# ===========================================================================

def _symmetric(balls: Sequence[BallConfig]) -> bool:
    first = balls[0]
    return all(b.weight == first.weight and b.measure == first.measure for b in balls)


def one_dim_gamma(balls: Sequence[BallConfig]) -> float:
    """gamma = max_i beta_i (2 r_i - E_i), admissible for well separated balls on a line."""
    return max(b.weight * (2 * b.radius - expected_center_distance(b.measure)) for b in balls)


def build_recipe(
    instance: Instance,
    gamma: Optional[float] = None,
    solution: Optional[GroundTruthSolution] = None,
) -> Recipe:
    """
    Cluster alpha from ball statistics and the realised medians.

    gamma must lie strictly inside
        (max_i beta_i (r_i - E_i), min_i beta_i (D_i - E_i)).
    The default is the midpoint; when all balls share one measure and one
    weight, alpha' = E + gamma / beta is set to min(1.29 r, midpoint) if
    that is admissible. A single ball uses gamma = beta (2 r - E).
    """
    balls = instance.balls
    k = instance.k
    weights = np.array([b.weight for b in balls])
    radii = np.array([b.radius for b in balls])
    expected = np.array([expected_center_distance(b.measure) for b in balls])
    separations = geometry(balls).separations
    lo = float(np.max(weights * (radii - expected)))
    hi = float(np.min(weights * (separations - expected)))

    def refuse(reason: str) -> Recipe:
        logger.debug("recipe inapplicable: %s", reason)
        empty = np.full(k, math.nan)
        return Recipe(False, reason, math.nan, (lo, hi), expected, empty, empty)

    if min(instance.counts) < MIN_CLUSTER_SIZE:
        return refuse(f"clusters need at least {MIN_CLUSTER_SIZE} points, got {min(instance.counts)}")
    if not lo < hi:
        return refuse(f"admissible interval ({lo:.6g}, {hi:.6g}) is empty")

    if gamma is None:
        if k == 1:
            gamma = one_dim_gamma(balls)
        else:
            gamma = 0.5 * (lo + hi)
            if _symmetric(balls):
                beta, e, r = weights[0], expected[0], radii[0]
                preferred = min(PREFERRED_ALPHA * r, e + gamma / beta)
                if lo < beta * (preferred - e) < hi:
                    gamma = beta * (preferred - e)
    elif not lo < gamma < hi:
        return refuse(f"gamma {gamma} outside ({lo:.6g}, {hi:.6g})")

    if solution is None:
        solution = ground_truth(instance)
    counts = np.array(instance.counts, dtype=float)
    corrections = solution.cluster_costs / counts - expected
    alpha = expected + gamma / weights + corrections
    return Recipe(True, "", float(gamma), (lo, hi), expected, corrections, alpha)


def certify_recovery(instance: Instance, gamma: Optional[float] = None) -> CertifiedRecovery:
    """
    Check the ground truth with the recipe certificate.

    A unique_optimum verdict proves exact recovery for this instance.
    """
    solution = ground_truth(instance)
    recipe = build_recipe(instance, gamma, solution)
    if not recipe.applicable:
        raise RecipeInapplicableError(recipe.reason)
    certificate = Certificate.from_cluster_alpha(solution.clustering, recipe.alpha)
    verdict = verify_certificate(instance, solution.clustering, certificate)
    logger.debug("certificate implies %s (gamma %.6g)", verdict.implies, recipe.gamma)
    return CertifiedRecovery(verdict, certificate, recipe, solution)


# ===========================================================================
#  IMPOSSIBILITY WITNESS
# ===========================================================================

def default_probe(instance: Instance, eps: float) -> np.ndarray:
    """Point at distance (1 - eps) r_1 from c_1 toward the nearest other centre."""
    c = instance.balls[0].center_array
    others = [b.center_array for b in instance.balls[1:]]
    if not others:
        raise DomainError("a probe toward another ball needs k >= 2")
    nearest = min(others, key=lambda o: float(np.linalg.norm(o - c)))
    u = (nearest - c) / np.linalg.norm(nearest - c)
    return c + (1.0 - eps) * instance.balls[0].radius * u


def impossibility_witness(
    instance: Instance,
    probe=None,
    settings: WitnessSettings = WitnessSettings(),
    solution: Optional[GroundTruthSolution] = None,
) -> WitnessResult:
    """
    Evidence that the ground truth is not an LP optimum.

    For every alpha satisfying (c) and (d) with the realised medians a_i,
        C(a_i) <= U_i = sum_{q in A_i} (min_{j != i} d(a_j, q) - d(a_i, q))
        C(x')  >= L   = sum_q (d(a_{l(q)}, q) - d(x', q))_+
    for any non-centre point x'. L > min_i U_i contradicts (a) + (b), and a
    negative term in some U_i means (c) and (d) cannot hold together.
    """
    if instance.k < 2:
        return WitnessResult("inconclusive", "needs at least two balls")
    if min(instance.counts) < MIN_CLUSTER_SIZE:
        return WitnessResult("inconclusive", f"clusters need at least {MIN_CLUSTER_SIZE} points")
    if solution is None:
        solution = ground_truth(instance)
    points = instance.points
    centers = np.asarray(solution.clustering.centers)
    ball_centers = np.array([b.center for b in instance.balls])
    offsets = np.linalg.norm(points[centers] - ball_centers, axis=1)
    if offsets.max() > settings.median_tolerance:
        return WitnessResult("inconclusive",
                             f"median offset {offsets.max():.4g} exceeds {settings.median_tolerance}")

    probe = default_probe(instance, settings.eps) if probe is None else np.asarray(probe, dtype=float)
    candidates = np.linalg.norm(points - probe, axis=1)
    candidates[centers] = np.inf
    probe_index = int(np.argmin(candidates))
    if candidates[probe_index] > settings.probe_radius:
        return WitnessResult("inconclusive",
                             f"no sample within {settings.probe_radius} of the probe point")

    labels = instance.labels
    to_centers = cdist(points, points[centers])
    own = to_centers[np.arange(points.shape[0]), labels]
    rivals = to_centers.copy()
    rivals[np.arange(points.shape[0]), labels] = np.inf
    terms = rivals.min(axis=1) - own
    scale = float(geometry(instance.balls).pairwise.max()) + 2.0 * max(b.radius for b in instance.balls)
    tol = STRICTNESS * (1.0 + scale)
    if terms.min() < -tol:
        return WitnessResult("proves_failure", "conditions (c) and (d) are infeasible",
                             margin=float(-terms.min()), probe_index=probe_index)
    bounds = np.bincount(labels, weights=terms, minlength=instance.k)
    upper = float(bounds.min())
    lower = float(np.maximum(own - np.linalg.norm(points - points[probe_index], axis=1), 0.0).sum())
    margin = lower - upper
    # sums of N terms: allow the rounding of each one
    status = "proves_failure" if margin > tol * points.shape[0] else "inconclusive"
    return WitnessResult(status, "bounds compared", lower, upper, margin, probe_index,
                         tuple(float(b) for b in bounds))


# ===========================================================================
#  GEOMETRY AND CONCENTRATION CHECKS
# ===========================================================================

@dataclass(frozen=True)
class GeometryCheck:
    tau: np.ndarray
    checked: int
    violations: int

    @property
    def holds(self) -> bool:
        return bool(np.all(self.tau > 0)) and self.violations == 0


def lemma_geometry_check(
    balls: Sequence[BallConfig],
    box_lo: Sequence[float],
    box_hi: Sequence[float],
    samples: int,
    seed: int,
) -> GeometryCheck:
    """
    For alpha in the box [box_lo, box_hi] with r_i < box_lo_i <= box_hi_i < D_i,
    every z within tau_i = min(box_lo_i - r_i, min_j D_j - box_hi_j) of c_i
    has B_alpha_i(z) covering ball i and B_alpha_j(z) missing ball j != i.
    """
    box_lo, box_hi = np.asarray(box_lo, dtype=float), np.asarray(box_hi, dtype=float)
    radii = np.array([b.radius for b in balls])
    separations = geometry(balls).separations
    if np.any(box_lo <= radii) or np.any(box_hi >= separations) or np.any(box_lo > box_hi):
        raise DomainError("alpha box must sit inside (r_i, D_i)")
    tau = np.minimum(box_lo - radii, np.min(separations - box_hi))
    centers = np.array([b.center for b in balls])
    m = centers.shape[1]
    violations = 0
    rng = rng_stream(seed, len(balls))
    for i in range(len(balls)):
        z = centers[i] + tau[i] * (1 - 1e-12) * sample_many(uniform_ball(m), rng_stream(seed, i), samples)
        alpha = box_lo + (box_hi - box_lo) * rng.random((samples, len(balls)))
        dist = cdist(z, centers)
        cover = dist[:, i] + radii[i] <= alpha[:, i]
        apart = np.delete(dist - radii - alpha, i, axis=1)
        violations += int(np.sum(~cover) + np.sum(apart < 0))
    return GeometryCheck(tau, samples * len(balls), violations)


@dataclass(frozen=True)
class ConcentrationResult:
    worst_offsets: np.ndarray   # per cluster, over all probed alpha
    radius: float

    @property
    def holds(self) -> bool:
        return bool(np.all(self.worst_offsets <= self.radius))


def concentration_check(
    instance: Instance,
    alpha: Sequence[float],
    xi: float,
    radius: float,
    random_points: int = 16,
    seed: int = 0,
) -> ConcentrationResult:
    """
    Distance from c_i to the point of cluster i maximising C, over the corners
    of the box ||alpha' - alpha||_inf <= xi (up to 2^6 of them) plus random
    points of the box.
    """
    alpha = np.asarray(alpha, dtype=float)
    k = instance.k
    probes = [alpha]
    if k <= 6:
        probes += [alpha + xi * np.array(signs) for signs in itertools.product((-1.0, 1.0), repeat=k)]
    rng = rng_stream(seed, k)
    probes += list(alpha + xi * rng.uniform(-1.0, 1.0, (random_points, k)))
    worst = np.zeros(k)
    for i in range(k):
        members = instance.members(i)
        dist = cdist(instance.points[members], instance.points)
        offsets = np.linalg.norm(instance.points[members] - instance.balls[i].center_array, axis=1)
        for a in probes:
            values = np.maximum(a[instance.labels][None, :] - dist, 0.0).sum(axis=1)
            worst[i] = max(worst[i], offsets[int(np.argmax(values))])
    return ConcentrationResult(worst, radius)
