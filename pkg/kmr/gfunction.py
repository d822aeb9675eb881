"""
gfunction.py
------------
Contribution functions and their single-ball reductions.

  C(z)  finite contribution sum over the points of an instance
  G(z)  expected contribution per unit n, sum_i beta_i E_i (alpha_i - d(z, x))_+
  H(z)  (alpha - E|x|) - E (alpha - d(z, x))_+ for one centred ball
  T(t)  H for the uniform law on the sphere of radius r
  R(z)  contribution of one ball to a point outside it

Every ball integral is reduced, by rotation invariance, to a radial integral
of a sphere kernel, and the sphere kernel to an angular integral against
the angle density. Both levels go through numerics.quadrature with the
kinks of (.)_+ passed explicitly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import optimize

from kmr.errors import DomainError
from kmr.instance import Instance, iter_distance_blocks
from kmr.measures import BallConfig, MeasureSpec, radial_law, rng_stream, sample_many
from kmr.numerics import (
    DEFAULT_QUADRATURE,
    SQRT_PI,
    AngleDensity,
    QuadratureSpec,
    angle_cdf,
    quadrature,
)

logger = logging.getLogger(__name__)


# ===========================================================================
#  PARAMETER TYPES
# ===========================================================================

class TfnParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    r:     float = Field(..., gt=0)
    alpha: float = Field(..., gt=0)
    m:     int   = Field(..., ge=1)

    @model_validator(mode="after")
    def _alpha_above_r(self) -> "TfnParams":
        if not self.alpha > self.r:
            raise ValueError(f"alpha ({self.alpha}) must exceed r ({self.r})")
        return self


class SearchSettings(BaseModel):
    """Grid and refinement used when checking that a ball centre maximises G."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    grid:              int   = Field(64, ge=2)
    random_directions: int   = Field(8, ge=0)
    xatol:             float = Field(1e-6, gt=0)
    seed:              int   = 0


BoundKind = Literal["T_lower", "R_upper", "angle_tail"]


@dataclass(frozen=True)
class BoundReport:
    quantity: BoundKind
    bound_value: float
    actual_value: float
    slack: float

    def holds(self, tolerance: float = 1e-8) -> bool:
        return self.slack >= -tolerance


@dataclass(frozen=True)
class MaximizerVerdict:
    status: Literal["center_is_unique_max", "counterexample_point", "inconclusive"]
    margin: float
    g_center: float
    g_best: float
    point: np.ndarray


# ===========================================================================
#  FINITE CONTRIBUTIONS
# ===========================================================================

def point_alpha(instance: Instance, alpha: Sequence[float]) -> np.ndarray:
    """Per-cluster alpha spread over the points of each cluster."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (instance.k,):
        raise DomainError(f"alpha needs {instance.k} entries, got shape {alpha.shape}")
    return alpha[instance.labels]


def contribution_many(points: np.ndarray, alpha_points: np.ndarray, probes: np.ndarray) -> np.ndarray:
    """sum_q (alpha_q - d(z, q))_+ for every row z of `probes`."""
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    out = np.empty(probes.shape[0])
    for start, stop, block in iter_distance_blocks(probes, points):
        out[start:stop] = np.maximum(alpha_points[None, :] - block, 0.0).sum(axis=1)
    return out


def contribution(instance: Instance, alpha: Sequence[float], z) -> float:
    """C(z) with per-cluster alpha."""
    z = np.asarray(z, dtype=float).reshape(1, -1)
    if z.shape[1] != instance.m:
        raise DomainError(f"z has dimension {z.shape[1]}, instance has {instance.m}")
    return float(contribution_many(instance.points, point_alpha(instance, alpha), z)[0])


# ===========================================================================
#  SPHERE KERNELS
# ===========================================================================

def _chord(s: float, t: float, theta):
    # |t v - x| for |x| = s at angle theta, stable near theta = 0
    return np.sqrt((s - t) ** 2 + 4.0 * s * t * np.sin(theta / 2.0) ** 2)


def sphere_mean_distance(s: float, t: float, m: int, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """E |z - x| for |z| = t and x uniform on the sphere of radius s."""
    if s < 0 or t < 0:
        raise DomainError("radii must be nonnegative")
    if s == 0.0:
        return t
    if t == 0.0:
        return s
    if m == 1:
        return 0.5 * (abs(t - s) + t + s)
    density = AngleDensity(m)
    return quadrature(lambda th: _chord(s, t, th) * density(th), 0.0, math.pi, spec).value


def sphere_contribution(
    alpha: float, s: float, t: float, m: int, spec: QuadratureSpec = DEFAULT_QUADRATURE
) -> float:
    """E (alpha - |z - x|)_+ for |z| = t and x uniform on the sphere of radius s."""
    if s == 0.0:
        return max(alpha - t, 0.0)
    if t == 0.0:
        return max(alpha - s, 0.0)
    if m == 1:
        return 0.5 * (max(alpha - abs(t - s), 0.0) + max(alpha - (t + s), 0.0))
    if alpha <= abs(t - s):
        return 0.0
    if alpha >= t + s:
        return alpha - sphere_mean_distance(s, t, m, spec)
    cos_bar = (s * s + t * t - alpha * alpha) / (2.0 * s * t)
    theta_bar = math.acos(min(1.0, max(-1.0, cos_bar)))
    density = AngleDensity(m)
    return quadrature(
        lambda th: (alpha - _chord(s, t, th)) * density(th), 0.0, theta_bar, spec
    ).value


# ===========================================================================
#  BALL INTEGRALS
# ===========================================================================

def ball_contribution(
    measure: MeasureSpec, alpha: float, t: float, spec: QuadratureSpec = DEFAULT_QUADRATURE
) -> float:
    """E (alpha - d(z, x))_+ for x from `measure` centred at 0 and |z| = t."""
    if alpha <= 0.0 or t - alpha >= measure.radius:
        return 0.0
    inner = spec.halve()
    kinks = (alpha - t, t - alpha, t + alpha, t)
    return radial_law(measure).expect(
        lambda s: sphere_contribution(alpha, s, t, measure.m, inner),
        spec.halve(),
        kinks,
        lo=max(0.0, t - alpha),
        hi=t + alpha,
    )


def expected_distance(measure: MeasureSpec, t: float, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """E d(z, x) for |z| = t."""
    inner = spec.halve()
    return radial_law(measure).expect(
        lambda s: sphere_mean_distance(s, t, measure.m, inner), spec.halve(), (t,)
    )


def _norm(z) -> float:
    return float(np.linalg.norm(np.atleast_1d(np.asarray(z, dtype=float))))


def g_value(
    balls: Sequence[BallConfig],
    alpha: Sequence[float],
    z,
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
) -> float:
    """G(z) = sum_i beta_i E_i (alpha_i - d(z, x))_+."""
    if len(alpha) != len(balls):
        raise DomainError(f"alpha needs {len(balls)} entries, got {len(alpha)}")
    z = np.asarray(z, dtype=float)
    total = 0.0
    for ball, a in zip(balls, alpha):
        t = _norm(z - ball.center_array)
        if t - ball.radius >= a:
            continue
        total += ball.weight * ball_contribution(ball.measure, float(a), t, spec)
    return total


def g_value_monte_carlo(
    balls: Sequence[BallConfig],
    alpha: Sequence[float],
    z,
    samples: int,
    seed: int,
) -> tuple[float, float]:
    """Sampling estimate of G(z) and its standard error."""
    z = np.asarray(z, dtype=float)
    mean, variance = 0.0, 0.0
    for i, (ball, a) in enumerate(zip(balls, alpha)):
        x = ball.center_array + sample_many(ball.measure, rng_stream(seed, i), samples)
        values = np.maximum(a - np.linalg.norm(x - z, axis=1), 0.0)
        mean += ball.weight * values.mean()
        variance += ball.weight ** 2 * values.var(ddof=1) / samples
    return float(mean), math.sqrt(variance)


# ===========================================================================
#  H / T / R
# ===========================================================================

def t_fn(params: TfnParams, t: float, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """T(t) = (alpha - r) - E (alpha - d(z, x))_+ with x uniform on the sphere of radius r."""
    if not 0.0 <= t <= params.r:
        raise DomainError(f"t = {t} outside [0, {params.r}]")
    if t == 0.0:
        return 0.0
    return (params.alpha - params.r) - sphere_contribution(params.alpha, params.r, t, params.m, spec)


def h_fn(measure: MeasureSpec, alpha: float, z, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """H(z) = (alpha - E|x|) - E (alpha - d(z, x))_+ for a point z inside the ball."""
    if not alpha > measure.radius:
        raise DomainError(f"alpha ({alpha}) must exceed the radius ({measure.radius})")
    t = _norm(z)
    if t > measure.radius * (1 + 1e-12):
        raise DomainError(f"|z| = {t} lies outside the ball")
    if t == 0.0:
        return 0.0
    mean = radial_law(measure).mean()
    return (alpha - mean) - ball_contribution(measure, alpha, t, spec)


def r_fn(measure: MeasureSpec, alpha: float, z, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """R(z) = E (alpha - d(z, x))_+ for a point z outside the ball."""
    if not alpha > measure.radius:
        raise DomainError(f"alpha ({alpha}) must exceed the radius ({measure.radius})")
    t = _norm(z)
    if not t > measure.radius:
        raise DomainError(f"|z| = {t} must exceed the radius {measure.radius}")
    if t >= alpha + measure.radius:
        return 0.0
    return ball_contribution(measure, alpha, t, spec)


# ===========================================================================
#  BOUNDS
# ===========================================================================

def t_lower_bound(r: float, eps: float, m: int) -> float:
    """Lower bound on T for alpha = r (1 + eps) and t >= eps r."""
    if not r > 0 or not 0.0 < eps < 1.0 or m < 2:
        raise DomainError(f"need r > 0, eps in (0, 1), m >= 2; got r={r}, eps={eps}, m={m}")
    return r * eps ** 2 / 8.0 - r * math.sqrt(math.pi * m / 2.0) * (1.0 - eps ** 2 / 16.0) ** ((m - 2) / 2.0)


def r_upper_bound(alpha: float, r: float, m: int, z_norm: float) -> float:
    """Upper bound on R for alpha < |z| <= alpha + r."""
    if not (r > 0 and alpha > r and m >= 2):
        raise DomainError(f"need alpha > r > 0 and m >= 2; got alpha={alpha}, r={r}, m={m}")
    if not alpha < z_norm <= alpha + r:
        raise DomainError(f"|z| = {z_norm} outside ({alpha}, {alpha + r}]")
    return (alpha + r - z_norm) * (SQRT_PI / 2.0) * math.sqrt(m / 2.0) * (alpha / z_norm) ** (m - 2)


def angle_tail_bound(m: int, phi1: float, phi2: float) -> float:
    """Bound on P(theta in [phi1, phi2]) for an interval avoiding pi / 2."""
    if m < 2 or not 0.0 <= phi1 <= phi2 <= math.pi or phi1 <= math.pi / 2 <= phi2:
        raise DomainError(f"need m >= 2 and [phi1, phi2] in [0, pi] avoiding pi/2; got {phi1}, {phi2}")
    phi = phi2 if phi2 < math.pi / 2 else phi1
    return (SQRT_PI / 2.0) * math.sqrt(m / 2.0) * math.sin(phi) ** (m - 2)


def t_bound_report(r: float, eps: float, m: int, t: float,
                   spec: QuadratureSpec = DEFAULT_QUADRATURE) -> BoundReport:
    if t < eps * r:
        raise DomainError(f"the lower bound needs t >= eps r = {eps * r}")
    bound = t_lower_bound(r, eps, m)
    actual = t_fn(TfnParams(r=r, alpha=r * (1 + eps), m=m), t, spec)
    return BoundReport("T_lower", bound, actual, actual - bound)


def r_bound_report(measure: MeasureSpec, alpha: float, z_norm: float,
                   spec: QuadratureSpec = DEFAULT_QUADRATURE) -> BoundReport:
    bound = r_upper_bound(alpha, measure.radius, measure.m, z_norm)
    actual = r_fn(measure, alpha, z_norm, spec)
    return BoundReport("R_upper", bound, actual, bound - actual)


def angle_tail_report(m: int, phi1: float, phi2: float) -> BoundReport:
    bound = angle_tail_bound(m, phi1, phi2)
    actual = angle_cdf(m, phi2) - angle_cdf(m, phi1)
    return BoundReport("angle_tail", bound, actual, bound - actual)


def tfn_scan(params: TfnParams, grid: int, spec: QuadratureSpec = DEFAULT_QUADRATURE) -> pd.DataFrame:
    """T on `grid` equally spaced points of (0, r]."""
    ts = params.r * np.arange(1, grid + 1) / grid
    return pd.DataFrame({"t": ts, "T": [t_fn(params, float(t), spec) for t in ts]})


# ===========================================================================
#  MAXIMIZER SEARCH
# ===========================================================================

def _search_directions(balls: Sequence[BallConfig], i: int, settings: SearchSettings) -> np.ndarray:
    c = balls[i].center_array
    dirs = []
    for j, ball in enumerate(balls):
        if j != i:
            v = ball.center_array - c
            dirs.append(v / np.linalg.norm(v))
    if settings.random_directions:
        gauss = rng_stream(settings.seed, i).standard_normal((settings.random_directions, c.size))
        dirs.extend(gauss / np.linalg.norm(gauss, axis=1, keepdims=True))
    if not dirs:
        dirs.append(np.eye(1, c.size)[0])
    return np.array(dirs)


def g_maximizer_check(
    balls: Sequence[BallConfig],
    alpha: Sequence[float],
    i: int,
    settings: SearchSettings = SearchSettings(),
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
) -> MaximizerVerdict:
    """
    Search ball i for a point where G is at least G(c_i).

    G is rotation invariant around c_i as far as ball i is concerned, so the
    search walks radial lines: one toward every other centre plus a few
    random ones. The best grid cell is refined with a bounded scalar search
    that never goes closer to the centre than the first grid radius.
    Margins within 10x the quadrature tolerance are inconclusive.
    """
    ball = balls[i]
    c = ball.center_array
    g_center = g_value(balls, alpha, c, spec)
    radii = ball.radius * np.arange(1, settings.grid + 1) / settings.grid
    best, best_dir, best_cell = -math.inf, None, 0
    for u in _search_directions(balls, i, settings):
        for j, rho in enumerate(radii):
            value = g_value(balls, alpha, c + rho * u, spec)
            if value > best:
                best, best_dir, best_cell = value, u, j
    lo = radii[max(best_cell - 1, 0)]
    hi = radii[min(best_cell + 1, radii.size - 1)]
    best_rho = radii[best_cell]
    if hi > lo:
        refined = optimize.minimize_scalar(
            lambda rho: -g_value(balls, alpha, c + rho * best_dir, spec),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": settings.xatol},
        )
        if -refined.fun > best:
            best, best_rho = float(-refined.fun), float(refined.x)
    margin = g_center - best
    threshold = 10.0 * spec.abs_tol
    if margin > threshold:
        status = "center_is_unique_max"
    elif margin < -threshold:
        status = "counterexample_point"
    else:
        status = "inconclusive"
    logger.debug("ball %d: G(center)=%.6g, best=%.6g, status %s", i, g_center, best, status)
    return MaximizerVerdict(status, margin, g_center, best, c + best_rho * best_dir)
