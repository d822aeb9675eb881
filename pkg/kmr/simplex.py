"""
simplex.py
----------
Two-phase revised simplex for  min c.x  s.t.  A x = b, x >= 0,  b >= 0.

The basis inverse is kept as a sparse LU factor of the basis matrix plus an
eta file of rank-one updates; the factor is rebuilt every
`refactor_interval` pivots. Pricing is Dantzig (most negative reduced cost,
lowest index on ties) and switches to Bland's rule after a run of
degenerate pivots, back again after the first pivot that moves.

Rows without a unit column get an artificial variable. Phase 1 minimises
their sum, then any artificial still basic at zero is pivoted out where
the row allows it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse
from scipy.sparse.linalg import splu

from kmr.errors import DomainError, SolverError

logger = logging.getLogger(__name__)


class SimplexSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    feasibility_tol:   float = Field(1e-9, gt=0)
    optimality_tol:    float = Field(1e-9, gt=0)
    pivot_tol:         float = Field(1e-9, gt=0)
    refactor_interval: int   = Field(64, ge=1)
    degenerate_factor: int   = Field(10, ge=1)
    max_iterations:    int   = Field(500_000, ge=1)


@dataclass(frozen=True, eq=False)
class SimplexResult:
    x: np.ndarray
    duals: np.ndarray
    objective: float
    iterations: int
    basis: np.ndarray


# ===========================================================================
#  BASIS FACTOR
# ===========================================================================

class _Factor:
    """B^-1 as LU(B0) followed by eta matrices E_1 ... E_t."""

    def __init__(self, A: sparse.csc_matrix, basis: np.ndarray):
        self.lu = splu(A[:, basis].tocsc())
        self.etas: list[tuple[int, np.ndarray]] = []

    def ftran(self, v: np.ndarray) -> np.ndarray:
        x = self.lu.solve(v)
        for r, col in self.etas:
            xr = x[r]
            if xr != 0.0:
                x += col * xr
                x[r] -= xr
        return x

    def btran(self, v: np.ndarray) -> np.ndarray:
        v = v.astype(float, copy=True)
        for r, col in reversed(self.etas):
            v[r] = v @ col
        return self.lu.solve(v, trans="T")

    def update(self, r: int, d: np.ndarray) -> None:
        col = -d / d[r]
        col[r] = 1.0 / d[r]
        self.etas.append((r, col))


# ===========================================================================
#  SOLVER
# ===========================================================================

class RevisedSimplex:
    def __init__(self, A, b, c, settings: SimplexSettings = SimplexSettings()):
        A = sparse.csc_matrix(A, dtype=float)
        b = np.asarray(b, dtype=float)
        c = np.asarray(c, dtype=float)
        rows, cols = A.shape
        if b.shape != (rows,) or c.shape != (cols,):
            raise DomainError("A, b and c have inconsistent shapes")
        if np.any(b < 0):
            raise DomainError("right-hand side must be nonnegative")
        self.settings = settings
        self.rows, self.n_real = rows, cols

        basis = self._unit_basis(A)
        missing = np.flatnonzero(basis < 0)
        artificial = sparse.csc_matrix(
            (np.ones(missing.size), (missing, np.arange(missing.size))), shape=(rows, missing.size)
        )
        basis[missing] = cols + np.arange(missing.size)
        self.A = sparse.hstack([A, artificial], format="csc")
        self.AT = self.A.T.tocsr()
        self.b = b
        self.c = np.concatenate([c, np.zeros(missing.size)])
        self.is_artificial = np.arange(self.A.shape[1]) >= cols
        self.basis = basis
        self.in_basis = np.zeros(self.A.shape[1], dtype=bool)
        self.in_basis[basis] = True
        self.iterations = 0
        self._refactor()

    @staticmethod
    def _unit_basis(A: sparse.csc_matrix) -> np.ndarray:
        basis = np.full(A.shape[0], -1, dtype=np.int64)
        counts = np.diff(A.indptr)
        for j in np.flatnonzero(counts == 1):
            start = A.indptr[j]
            row = A.indices[start]
            if A.data[start] == 1.0 and basis[row] < 0:
                basis[row] = j
        return basis

    # --- basis bookkeeping -------------------------------------------------

    def _refactor(self) -> None:
        try:
            self.factor = _Factor(self.A, self.basis)
        except RuntimeError as exc:
            raise SolverError(f"basis factorization failed: {exc}") from exc
        x_b = self.factor.lu.solve(self.b)
        x_b[np.abs(x_b) < self.settings.feasibility_tol] = 0.0
        self.x_b = x_b

    def _column(self, j: int) -> np.ndarray:
        return self.A[:, [j]].toarray().ravel()

    def _pivot(self, r: int, q: int, d: np.ndarray, theta: float) -> None:
        self.x_b -= theta * d
        self.x_b[r] = theta
        self.x_b[self.x_b < self.settings.feasibility_tol] = 0.0
        self.factor.update(r, d)
        self.in_basis[self.basis[r]] = False
        self.in_basis[q] = True
        self.basis[r] = q
        self.iterations += 1
        if len(self.factor.etas) >= self.settings.refactor_interval:
            self._refactor()

    # --- one phase ---------------------------------------------------------

    def _run(self, costs: np.ndarray, allowed: np.ndarray) -> np.ndarray:
        s = self.settings
        degenerate, bland = 0, False
        while True:
            if self.iterations >= s.max_iterations:
                raise SolverError(f"simplex iteration limit {s.max_iterations} reached")
            duals = self.factor.btran(costs[self.basis])
            reduced = costs - self.AT @ duals
            reduced[self.in_basis | ~allowed] = 0.0
            entering = np.flatnonzero(reduced < -s.optimality_tol)
            if entering.size == 0:
                return duals
            q = int(entering[0]) if bland else int(np.argmin(reduced))

            d = self.factor.ftran(self._column(q))
            stuck = np.flatnonzero(self.is_artificial[self.basis] & (np.abs(d) > s.pivot_tol)
                                   & (self.x_b <= s.feasibility_tol)) if not allowed.all() else []
            if len(stuck):
                # an artificial at zero must leave before it can turn positive
                r, theta = int(stuck[0]), 0.0
            else:
                rows = np.flatnonzero(d > s.pivot_tol)
                if rows.size == 0:
                    raise SolverError("LP is unbounded")
                ratios = self.x_b[rows] / d[rows]
                theta = float(ratios.min())
                ties = rows[ratios <= theta + s.feasibility_tol]
                if bland:
                    r = int(ties[np.argmin(self.basis[ties])])
                else:
                    r = int(ties[np.argmax(d[ties])])
                theta = float(self.x_b[r] / d[r])

            self._pivot(r, q, d, theta)
            if theta <= s.feasibility_tol:
                degenerate += 1
                if not bland and degenerate >= s.degenerate_factor * self.rows:
                    logger.debug("switching to Bland's rule after %d degenerate pivots", degenerate)
                    bland = True
            else:
                degenerate, bland = 0, False

    def _drive_out_artificials(self) -> None:
        real = ~self.is_artificial
        for r in np.flatnonzero(self.is_artificial[self.basis]):
            unit = np.zeros(self.rows)
            unit[r] = 1.0
            row = self.AT @ self.factor.btran(unit)
            row[self.in_basis | ~real] = 0.0
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) <= 1e-7:
                continue   # redundant row; the artificial stays at zero
            self._pivot(int(r), j, self.factor.ftran(self._column(j)), 0.0)

    def solve(self) -> SimplexResult:
        s = self.settings
        if self.is_artificial.any():
            self._run(self.is_artificial.astype(float), np.ones_like(self.is_artificial))
            infeasibility = float(self.x_b[self.is_artificial[self.basis]].sum())
            if infeasibility > s.feasibility_tol * max(1.0, float(np.abs(self.b).max())):
                raise SolverError(f"LP is infeasible (phase 1 residual {infeasibility:.3g})")
            self._drive_out_artificials()
            self._refactor()
        duals = self._run(self.c, ~self.is_artificial)
        x = np.zeros(self.A.shape[1])
        x[self.basis] = self.x_b
        x = x[: self.n_real]
        objective = float(self.c[: self.n_real] @ x)
        logger.debug("simplex finished after %d pivots, objective %.12g", self.iterations, objective)
        return SimplexResult(x, duals, objective, self.iterations, self.basis.copy())
