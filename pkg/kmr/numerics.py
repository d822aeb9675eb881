"""
numerics.py
-----------
Scalar special functions, the angle density of a uniform point on a sphere
and the adaptive quadrature wrapper every analytic evaluation goes through.

The angle between a uniform direction in R^m and a fixed axis has density

    p_m(theta) = Gamma(m/2) / (sqrt(pi) * Gamma((m-1)/2)) * sin(theta)^(m-2)

on [0, pi]. All gamma quotients are taken in log space so large m never
overflows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from numbers import Integral
from typing import Callable, Iterable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import integrate as sp_integrate
from scipy import special

from kmr.errors import DomainError, QuadratureError

logger = logging.getLogger(__name__)

SQRT_PI = math.sqrt(math.pi)

# an abnormal termination short of the subdivision limit keeps its estimate
# when the error bound is within ROUNDOFF_SLACK times the target.
ROUNDOFF_SLACK = 100.0


# ===========================================================================
#  QUADRATURE
# ===========================================================================

class QuadratureSpec(BaseModel):
    """Error targets for one adaptive integral."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    abs_tol:          float = Field(1e-10, gt=0)
    rel_tol:          float = Field(1e-10, ge=0)
    max_subdivisions: int   = Field(200, ge=1)

    def halve(self) -> "QuadratureSpec":
        """Budget for each level of a two-level nested integral."""
        return self.model_copy(update={"abs_tol": self.abs_tol / 2, "rel_tol": self.rel_tol / 2})

    def target(self, value: float) -> float:
        return max(self.abs_tol, self.rel_tol * abs(value))


DEFAULT_QUADRATURE = QuadratureSpec()


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    error: float
    evaluations: int = 0


def quadrature(
    f: Callable[[float], float],
    a: float,
    b: float,
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
    points: Optional[Iterable[float]] = None,
) -> QuadratureResult:
    """
    Integrate f over [a, b] with QUADPACK, splitting at `points`.

    Callers pass every known kink of the integrand in `points`; only the
    ones strictly inside (a, b) are used.

    Raises
    ------
    DomainError      if a > b or an endpoint is not finite.
    QuadratureError  if the error bound misses the target.
    """
    if not (math.isfinite(a) and math.isfinite(b)):
        raise DomainError(f"integration bounds must be finite, got [{a}, {b}]")
    if a > b:
        raise DomainError(f"integration bounds reversed: [{a}, {b}]")
    if a == b:
        return QuadratureResult(0.0, 0.0)

    inner = sorted({float(p) for p in (points or ()) if a < p < b})
    value, error, info, *rest = sp_integrate.quad(
        f,
        a,
        b,
        epsabs=spec.abs_tol,
        epsrel=spec.rel_tol,
        limit=spec.max_subdivisions,
        points=inner or None,
        full_output=1,
    )
    target = spec.target(value)
    if not math.isfinite(value):
        raise QuadratureError(f"non-finite integral on [{a}, {b}]", value, error)
    # quad appends a message only on abnormal termination
    if rest:
        exhausted = _subdivisions_used(info) >= spec.max_subdivisions
        if not exhausted and error <= ROUNDOFF_SLACK * target:
            logger.debug("abnormal termination on [%g, %g] accepted, error %.3g", a, b, error)
        else:
            reason = "subdivision limit reached" if exhausted else "error bound missed"
            raise QuadratureError(
                f"quadrature on [{a}, {b}] did not converge ({reason}, error {error:.3g}, "
                f"target {target:.3g})",
                value,
                error,
            )
    return QuadratureResult(float(value), float(error), int(info.get("neval", 0)))


def _subdivisions_used(info: dict) -> int:
    return int(info.get("last", 0))


def integrate(
    f: Callable[[float], float],
    a: float,
    b: float,
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
    points: Optional[Iterable[float]] = None,
) -> float:
    """Value of the integral of f on [a, b]; see `quadrature`."""
    return quadrature(f, a, b, spec, points).value


# ===========================================================================
#  SPECIAL FUNCTIONS
# ===========================================================================

def _check_dimension(m: int, minimum: int = 2) -> int:
    if isinstance(m, bool) or not isinstance(m, Integral) or m < minimum:
        raise DomainError(f"dimension must be an integer >= {minimum}, got {m!r}")
    return int(m)


def gamma_ratio(m: int) -> float:
    """Gamma(m/2) / Gamma((m-1)/2), evaluated through log-gamma."""
    m = _check_dimension(m)
    return math.exp(special.gammaln(m / 2) - special.gammaln((m - 1) / 2))


def crossing_threshold(m: int) -> float:
    """
    Value s_m in (0, 1) with p_m(theta) >= p_{m+1}(theta) exactly when
    sin(theta) <= s_m.
    """
    m = _check_dimension(m)
    return math.exp(
        2 * special.gammaln(m / 2)
        - special.gammaln((m - 1) / 2)
        - special.gammaln((m + 1) / 2)
    )


@dataclass(frozen=True)
class AngleDensity:
    """Density of the angle between a uniform direction in R^m and a fixed axis."""

    m: int
    normalizer: float = field(init=False)

    def __post_init__(self) -> None:
        _check_dimension(self.m)
        object.__setattr__(self, "normalizer", gamma_ratio(self.m) / SQRT_PI)

    def __call__(self, theta):
        if self.m == 2:
            return self.normalizer * np.ones_like(np.asarray(theta, dtype=float))[()]
        return self.normalizer * np.sin(theta) ** (self.m - 2)

    def cdf(self, psi):
        """P(theta <= psi) as a regularized incomplete beta function."""
        a = (self.m - 1) / 2
        x = (1.0 - np.cos(psi)) / 2.0
        return special.betainc(a, a, np.clip(x, 0.0, 1.0))


def angle_density(m: int, theta: float) -> float:
    """p_m(theta) for theta in [0, pi]."""
    if not 0.0 <= theta <= math.pi:
        raise DomainError(f"angle must lie in [0, pi], got {theta}")
    return float(AngleDensity(m)(theta))


def angle_cdf(m: int, psi: float) -> float:
    """P(theta <= psi) for the angle law in dimension m."""
    if not 0.0 <= psi <= math.pi:
        raise DomainError(f"angle must lie in [0, pi], got {psi}")
    return float(AngleDensity(m).cdf(psi))


def positive_part(x):
    return np.maximum(x, 0.0)
