"""
lp.py
-----
The k-median LP relaxation

    min  sum_pq d(p, q) z_pq
    s.t. sum_p z_pq = 1          for every q      (assignment)
         z_pq <= y_p             for every p, q   (linking)
         sum_p y_p = k                            (cardinality)
         y, z >= 0

its solution with either the built-in revised simplex or HiGHS, and the
exact-recovery decision for an instance.

Dual conventions, shared by both backends: alpha_q on the assignment rows,
beta_pq >= 0 on the linking rows, omega on the cardinality row, so that
the dual objective is sum_q alpha_q - k omega.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from kmr.analytics import partition_agreement
from kmr.certificate import (
    Certificate,
    DualSolution,
    certify_recovery,
    dual_from_certificate,
    primal_residual,
    verify_certificate,
)
from kmr.errors import DomainError, KmrError, SizeGuardError, SolverError
from kmr.instance import Clustering, Instance
from kmr.measures import rng_stream
from kmr.simplex import RevisedSimplex, SimplexSettings

logger = logging.getLogger(__name__)

RecoveryStatus = Literal[
    "achieved",
    "failed_fractional",
    "failed_wrong_partition",
    "failed_nonunique",
    "failed_witness",
    "undecided",
]


class LpSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    size_guard:         int     = Field(250, ge=1)
    integrality_tol:    float   = Field(1e-6, gt=0)
    backend:            Literal["auto", "simplex", "highs"] = "auto"
    simplex_limit:      int     = Field(60, ge=1)
    perturbations:      int     = Field(5, ge=0)
    perturbation_scale: float   = Field(1e-9, gt=0)
    seed:               int     = 0
    simplex:            SimplexSettings = Field(default_factory=SimplexSettings)


# ===========================================================================
#  MODEL
# ===========================================================================

@dataclass(frozen=True, eq=False)
class LpModel:
    """Variables are ordered y_0..y_{N-1}, then z_pq at N + p N + q."""

    dist: np.ndarray
    k: int

    @property
    def N(self) -> int:
        return self.dist.shape[0]

    @property
    def n_variables(self) -> int:
        return self.N * self.N + self.N

    @property
    def n_constraints(self) -> int:
        return self.N * self.N + self.N + 1

    def z_index(self, p: int, q: int) -> int:
        return self.N + p * self.N + q

    def objective_of(self, y: np.ndarray, z: np.ndarray) -> float:
        return float((self.dist * z).sum())

    def _blocks(self):
        # (rows, cols, vals) of the assignment, linking and cardinality blocks
        N = self.N
        p, q = np.divmod(np.arange(N * N), N)
        z_cols = N + p * N + q
        assign = (q, z_cols, np.ones(N * N))
        link_rows = np.arange(N * N)
        link = (np.concatenate([link_rows, link_rows]),
                np.concatenate([z_cols, p]),
                np.concatenate([np.ones(N * N), -np.ones(N * N)]))
        card = (np.zeros(N, dtype=np.int64), np.arange(N), np.ones(N))
        return assign, link, card

    def standard_form(self):
        """A x = b, x >= 0 with one slack per linking row; returns (A, b, c)."""
        N = self.N
        assign, link, card = self._blocks()
        slack_cols = self.n_variables + np.arange(N * N)
        rows = np.concatenate([assign[0], N + link[0], N + np.arange(N * N), [N + N * N] * N])
        cols = np.concatenate([assign[1], link[1], slack_cols, card[1]])
        vals = np.concatenate([assign[2], link[2], np.ones(N * N), card[2]])
        A = sparse.csc_matrix((vals, (rows, cols)), shape=(self.n_constraints, self.n_variables + N * N))
        b = np.concatenate([np.ones(N), np.zeros(N * N), [float(self.k)]])
        c = np.concatenate([np.zeros(N), self.dist.ravel(), np.zeros(N * N)])
        return A, b, c

    def inequality_form(self):
        """(c, A_ub, b_ub, A_eq, b_eq) over x = (y, z)."""
        N = self.N
        assign, link, card = self._blocks()
        A_eq = sparse.csr_matrix(
            (np.concatenate([assign[2], card[2]]),
             (np.concatenate([assign[0], N + card[0]]), np.concatenate([assign[1], card[1]]))),
            shape=(N + 1, self.n_variables),
        )
        A_ub = sparse.csr_matrix((link[2], (link[0], link[1])), shape=(N * N, self.n_variables))
        b_eq = np.concatenate([np.ones(N), [float(self.k)]])
        c = np.concatenate([np.zeros(N), self.dist.ravel()])
        return c, A_ub, np.zeros(N * N), A_eq, b_eq


@dataclass(frozen=True, eq=False)
class LpSolution:
    y: np.ndarray
    z: np.ndarray
    objective: float
    status: Literal["optimal", "infeasible_internal_error"]
    backend: str = ""
    iterations: int = 0

    def rounded(self) -> tuple[np.ndarray, np.ndarray]:
        return np.round(self.y), np.round(self.z)

    def integrality_gap(self) -> float:
        return float(max(np.abs(self.y - np.round(self.y)).max(), np.abs(self.z - np.round(self.z)).max()))


@dataclass(frozen=True)
class RecoveryVerdict:
    status: RecoveryStatus
    method: str
    evidence: dict = field(default_factory=dict)
    uniqueness: Optional[Literal["proven", "accepted"]] = None
    ari: float = float("nan")
    margin: float = float("nan")
    # primal and dual behind the verdict, when it rests on an LP point
    lp: Optional[tuple[LpSolution, DualSolution]] = field(default=None, repr=False, compare=False)

    @property
    def achieved(self) -> bool:
        return self.status == "achieved"


def build(instance, k: Optional[int] = None) -> LpModel:
    """LP for an Instance (k from its balls) or for raw points with explicit k."""
    if isinstance(instance, Instance):
        dist, k = instance.distances, instance.k if k is None else k
    else:
        points = np.asarray(instance, dtype=float)
        dist = cdist(points, points)
    if k is None or not 1 <= k <= dist.shape[0]:
        raise DomainError(f"need 1 <= k <= N, got k={k}, N={dist.shape[0]}")
    return LpModel(dist, int(k))


# ===========================================================================
#  SOLVERS
# ===========================================================================

def _solve_simplex(model: LpModel, settings: LpSettings):
    A, b, c = model.standard_form()
    result = RevisedSimplex(A, b, c, settings.simplex).solve()
    N = model.N
    y = result.x[:N]
    z = result.x[N: N + N * N].reshape(N, N)
    duals = result.duals
    alpha = duals[:N].copy()
    beta = -duals[N: N + N * N].reshape(N, N)
    omega = float(-duals[N + N * N])
    return y, z, DualSolution(alpha, np.maximum(beta, 0.0), omega), result.iterations


def _solve_highs(model: LpModel, settings: LpSettings):
    c, A_ub, b_ub, A_eq, b_eq = model.inequality_form()
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise SolverError(f"HiGHS failed: {res.message}")
    N = model.N
    y = res.x[:N]
    z = res.x[N:].reshape(N, N)
    alpha = np.asarray(res.eqlin.marginals[:N], dtype=float)
    omega = float(-res.eqlin.marginals[N])
    beta = -np.asarray(res.ineqlin.marginals, dtype=float).reshape(N, N)
    return y, z, DualSolution(alpha, np.maximum(beta, 0.0), omega), int(res.nit)


def solve(model: LpModel, settings: LpSettings = LpSettings()) -> tuple[LpSolution, DualSolution]:
    """Optimal primal-dual pair of the relaxation."""
    if model.N > settings.size_guard:
        raise SizeGuardError(f"{model.N} points exceed the LP size guard {settings.size_guard}")
    backend = settings.backend
    if backend == "auto":
        backend = "simplex" if model.N <= settings.simplex_limit else "highs"
    runner = _solve_simplex if backend == "simplex" else _solve_highs
    y, z, dual, iterations = runner(model, settings)
    y = np.where(np.abs(y) < 1e-12, 0.0, y)
    z = np.where(np.abs(z) < 1e-12, 0.0, z)

    objective = model.objective_of(y, z)
    residual = primal_residual(y, z, model.k)
    gap = objective - dual.objective(model.k)
    if residual > 1e-6:
        raise SolverError(f"{backend} returned a point with residual {residual:.3g}")
    if abs(gap) > 1e-6 * (1.0 + abs(objective)):
        logger.warning("duality gap %.3g after %s solve", gap, backend)
    logger.debug("%s: N=%d k=%d objective %.12g (%d iterations)", backend, model.N, model.k, objective, iterations)
    return LpSolution(y, z, objective, "optimal", backend, iterations), dual


# ===========================================================================
#  RECOVERY DECISION
# ===========================================================================

def _partition(solution: LpSolution, tol: float) -> Optional[np.ndarray]:
    """Centre of every point by column argmax of z; None when a column ties."""
    z = solution.z
    order = np.sort(z, axis=0)
    if z.shape[0] > 1 and np.any(order[-1] - order[-2] <= tol):
        return None
    return np.argmax(z, axis=0)


def _matches_labels(centers_of: np.ndarray, labels: np.ndarray, k: int) -> bool:
    seen = {}
    for label in range(k):
        owners = np.unique(centers_of[labels == label])
        if owners.size != 1:
            return False
        seen[label] = int(owners[0])
    return len(set(seen.values())) == k


def _same_vertex(a: LpSolution, b: LpSolution) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a.rounded(), b.rounded()))


def _certified_point(instance: Instance, certified) -> tuple[LpSolution, DualSolution]:
    """Integral LP point of the ground truth with the certificate's dual point."""
    N = instance.size
    clustering = certified.solution.clustering
    y = np.zeros(N)
    y[list(clustering.centers)] = 1.0
    z = np.zeros((N, N))
    z[clustering.center_of(), np.arange(N)] = 1.0
    solution = LpSolution(y, z, certified.solution.objective, "optimal", "certificate")
    return solution, dual_from_certificate(instance, clustering, certified.certificate)


def decide_recovery(
    instance: Instance,
    settings: LpSettings = LpSettings(),
    use_certificate: bool = True,
) -> RecoveryVerdict:
    """
    Decide exact recovery for an instance.

    The recipe certificate is tried first and needs no LP. Otherwise the LP
    is solved and checked for integrality and for the ground-truth
    partition; uniqueness is then proven by a strict certificate built from
    the dual, or accepted when small random perturbations of the objective
    keep the same vertex.
    """
    if use_certificate:
        try:
            certified = certify_recovery(instance)
        except KmrError as exc:
            logger.debug("certificate path unavailable: %s", exc)
        else:
            if certified.verdict.implies == "unique_optimum":
                return RecoveryVerdict("achieved", "certificate", certified.verdict.ledger(),
                                       "proven", 1.0, certified.verdict.cond_b.margin,
                                       _certified_point(instance, certified))

    if instance.size > settings.size_guard:
        return RecoveryVerdict("undecided", "none",
                               {"reason": f"{instance.size} points exceed the LP size guard"})

    model = build(instance)
    solution, dual = solve(model, settings)
    point = (solution, dual)
    evidence = {"objective": solution.objective, "backend": solution.backend}
    gap = solution.integrality_gap()
    if gap > settings.integrality_tol:
        return RecoveryVerdict("failed_fractional", "lp", {**evidence, "integrality_gap": gap},
                               margin=-gap, lp=point)

    centers_of = _partition(solution, settings.integrality_tol)
    if centers_of is None:
        return RecoveryVerdict("failed_nonunique", "lp", {**evidence, "reason": "assignment tie"}, lp=point)
    ari = partition_agreement(instance.labels, centers_of)
    if not _matches_labels(centers_of, instance.labels, instance.k):
        return RecoveryVerdict("failed_wrong_partition", "lp", evidence, ari=ari, lp=point)

    centers = tuple(int(centers_of[instance.members(i)[0]]) for i in range(instance.k))
    clustering = Clustering(centers, instance.labels.copy())
    verdict = verify_certificate(instance, clustering, Certificate(dual.alpha))
    if verdict.implies == "unique_optimum":
        return RecoveryVerdict("achieved", "lp", {**evidence, "certificate": verdict.ledger()},
                               "proven", ari, verdict.cond_b.margin, point)

    scale = settings.perturbation_scale * float(model.dist.max())
    for t in range(settings.perturbations):
        noise = rng_stream(settings.seed, t).uniform(-1.0, 1.0, model.dist.shape)
        perturbed = LpModel(model.dist + scale * noise, model.k)
        other, _ = solve(perturbed, settings)
        if not _same_vertex(solution, other):
            return RecoveryVerdict("failed_nonunique", "lp",
                                   {**evidence, "reason": f"perturbation {t} moved the vertex"},
                                   ari=ari, lp=point)
    if settings.perturbations == 0:
        return RecoveryVerdict("undecided", "lp", {**evidence, "reason": "uniqueness not established"},
                               ari=ari, lp=point)
    return RecoveryVerdict("achieved", "lp", {**evidence, "perturbations": settings.perturbations},
                           "accepted", ari, lp=point)
