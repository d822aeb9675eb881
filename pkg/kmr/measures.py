"""
measures.py
-----------
Rotation-invariant probability measures on balls in R^m.

A measure is described by its radial law: the distribution of the distance
from the ball centre. Directions are uniform. Every supported law is a
finite mix of atoms (spheres) and polynomial densities in the radius, so
cdfs and means are exact and only sampling needs an iterative inverse.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Annotated, Callable, Iterable, Literal, Optional, Sequence, Union

import numpy as np
from numpy.polynomial import Polynomial
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from kmr.errors import DomainError
from kmr.numerics import DEFAULT_QUADRATURE, QuadratureSpec, quadrature

logger = logging.getLogger(__name__)

# Annulus defaults: core radius as a fraction of the ball radius, and the
# share of the interior mass held by the core (the rest sits in the ramp).
ANNULUS_CORE = 0.01
ANNULUS_CORE_SHARE = 0.9

# Bisection steps for the inverse radial cdf; 2^-64 is below double spacing on [0, 1].
_PPF_STEPS = 64


# ===========================================================================
#  RADIAL LAW SPECS
# ===========================================================================

class _Law(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class UniformBallLaw(_Law):
    kind: Literal["uniform_ball"] = "uniform_ball"


class UniformSphereLaw(_Law):
    """All mass on the sphere of radius s (s = 0 is the point mass at the centre)."""

    kind: Literal["uniform_sphere"] = "uniform_sphere"
    s:    float = Field(..., ge=0)


class PointMassLaw(_Law):
    kind: Literal["point_mass_origin"] = "point_mass_origin"


class RadialDensityLaw(_Law):
    """
    Tabulated m-dimensional density profile.

    `values[i]` is the density of the measure (per unit volume) at distance
    `knots[i] * radius` from the centre, linear in between. Knots are
    fractions of the radius, start at 0 and end at 1.
    """

    kind:       Literal["radial_density"] = "radial_density"
    knots:      tuple[float, ...]
    values:     tuple[float, ...]
    decreasing: bool = False

    @model_validator(mode="after")
    def _check_table(self) -> "RadialDensityLaw":
        if len(self.knots) < 2 or len(self.knots) != len(self.values):
            raise ValueError("knots and values must have the same length >= 2")
        if self.knots[0] != 0.0 or self.knots[-1] != 1.0:
            raise ValueError("knots must start at 0 and end at 1")
        if any(b <= a for a, b in zip(self.knots, self.knots[1:])):
            raise ValueError("knots must be strictly increasing")
        if any(v < 0 for v in self.values) or not any(v > 0 for v in self.values):
            raise ValueError("values must be nonnegative and not all zero")
        if self.decreasing and any(b >= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("decreasing profile must be strictly decreasing")
        return self


class AnnulusLaw(_Law):
    """
    Continuous law with almost all mass in the shell [1 - eps, 1].

    The interior [0, 1 - eps) holds exactly `interior_mass`: the share
    `core_share` in a small tent around the centre, the rest in a linear
    ramp just below the shell.
    """

    kind:          Literal["annulus"] = "annulus"
    eps:           float = Field(..., gt=0, lt=1)
    interior_mass: float = Field(..., gt=0, lt=1)
    core:          float = Field(ANNULUS_CORE, gt=0, lt=1)
    core_share:    float = Field(ANNULUS_CORE_SHARE, gt=0, lt=1)

    @property
    def plateau(self) -> float:
        return (1.0 - self.interior_mass) / self.eps

    @property
    def ramp_width(self) -> float:
        return 2.0 * (1.0 - self.core_share) * self.interior_mass / self.plateau

    @model_validator(mode="after")
    def _check_room(self) -> "AnnulusLaw":
        if self.core >= 1.0 - self.eps - self.ramp_width:
            raise ValueError("core overlaps the ramp below the shell")
        return self


RadialLawSpec = Annotated[
    Union[UniformBallLaw, UniformSphereLaw, PointMassLaw, RadialDensityLaw, AnnulusLaw],
    Field(discriminator="kind"),
]


class MeasureSpec(BaseModel):
    """A rotation-invariant probability measure on the ball of `radius` in R^m."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    m:      int           = Field(..., ge=1)
    radius: float         = Field(1.0, gt=0)
    law:    RadialLawSpec = Field(default_factory=UniformBallLaw)

    @model_validator(mode="after")
    def _check_law(self) -> "MeasureSpec":
        if isinstance(self.law, UniformSphereLaw) and self.law.s > self.radius:
            raise ValueError(f"sphere radius {self.law.s} exceeds ball radius {self.radius}")
        return self

    @property
    def is_continuous(self) -> bool:
        return isinstance(self.law, (UniformBallLaw, RadialDensityLaw, AnnulusLaw))


def uniform_ball(m: int, radius: float = 1.0) -> MeasureSpec:
    return MeasureSpec(m=m, radius=radius, law=UniformBallLaw())


def uniform_sphere(m: int, s: float, radius: Optional[float] = None) -> MeasureSpec:
    if radius is None:
        radius = s if s > 0 else 1.0
    return MeasureSpec(m=m, radius=radius, law=UniformSphereLaw(s=s))


def annulus(m: int, eps: float, interior_mass: float, radius: float = 1.0,
            core: float = ANNULUS_CORE) -> MeasureSpec:
    return MeasureSpec(m=m, radius=radius,
                       law=AnnulusLaw(eps=eps, interior_mass=interior_mass, core=core))


class BallConfig(BaseModel):
    """One ball of the extended stochastic ball model."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    center:  tuple[float, ...]
    radius:  float       = Field(..., gt=0)
    measure: MeasureSpec
    weight:  float       = Field(1.0, ge=1)

    @field_validator("center")
    @classmethod
    def _finite_center(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not value or not all(math.isfinite(c) for c in value):
            raise ValueError("center must be a nonempty finite vector")
        return value

    @model_validator(mode="after")
    def _check_consistency(self) -> "BallConfig":
        if len(self.center) != self.measure.m:
            raise ValueError(f"center has dimension {len(self.center)}, measure has {self.measure.m}")
        if not math.isclose(self.radius, self.measure.radius, rel_tol=1e-12, abs_tol=0.0):
            raise ValueError(f"ball radius {self.radius} differs from measure radius {self.measure.radius}")
        return self

    @property
    def m(self) -> int:
        return self.measure.m

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)


def make_ball(center: Sequence[float], measure: MeasureSpec, weight: float = 1.0) -> BallConfig:
    return BallConfig(center=tuple(float(c) for c in center), radius=measure.radius,
                      measure=measure, weight=weight)


# ===========================================================================
#  RADIAL LAWS (evaluated form)
# ===========================================================================

@dataclass(frozen=True)
class _Piece:
    # polynomials in the local variable x = t - lo
    lo: float
    hi: float
    density: Polynomial
    antiderivative: Polynomial   # zero at x = 0
    mass: float


@dataclass(frozen=True)
class RadialLaw:
    """Law of the distance to the centre, in absolute units."""

    radius: float
    atoms: tuple[tuple[float, float], ...]
    pieces: tuple[_Piece, ...]
    uniform_dim: Optional[int] = None   # set for the uniform ball: closed-form inverse

    def cdf(self, t):
        """P(distance <= t)."""
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for s, w in self.atoms:
            out = out + np.where(t >= s, w, 0.0)
        for piece in self.pieces:
            inside = np.clip(t, piece.lo, piece.hi)
            out = out + np.where(t >= piece.hi, piece.mass, piece.antiderivative(inside - piece.lo))
        return np.clip(out, 0.0, 1.0)[()]

    def cdf_left(self, t: float) -> float:
        """P(distance < t)."""
        return float(self.cdf(t)) - sum(w for s, w in self.atoms if s == t)

    def density(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for piece in self.pieces:
            out = out + np.where((t >= piece.lo) & (t <= piece.hi), piece.density(t - piece.lo), 0.0)
        return out[()]

    def mean(self) -> float:
        total = sum(s * w for s, w in self.atoms)
        for piece in self.pieces:
            t = Polynomial([piece.lo, 1.0])
            moment = (t * piece.density).integ(lbnd=0.0)
            total += float(moment(piece.hi - piece.lo))
        return total

    def breakpoints(self) -> list[float]:
        return sorted({p.lo for p in self.pieces} | {p.hi for p in self.pieces})

    def expect(
        self,
        fn: Callable[[float], float],
        spec: QuadratureSpec = DEFAULT_QUADRATURE,
        kinks: Iterable[float] = (),
        lo: float = 0.0,
        hi: float = math.inf,
    ) -> float:
        """
        E fn(distance), restricted to distances in [lo, hi].

        fn must vanish outside [lo, hi]; the restriction only trims the
        integration range.
        """
        kinks = tuple(kinks)
        total = sum(w * fn(s) for s, w in self.atoms if lo <= s <= hi)
        share = spec.model_copy(update={"abs_tol": spec.abs_tol / max(len(self.pieces), 1)})
        for piece in self.pieces:
            a, b = max(piece.lo, lo), min(piece.hi, hi)
            if a >= b:
                continue
            result = quadrature(lambda s, p=piece: fn(s) * p.density(s - p.lo), a, b, share, kinks)
            total += result.value
        return total

    def ppf(self, u):
        """Inverse cdf by vectorised bisection (closed form for the uniform ball)."""
        u = np.asarray(u, dtype=float)
        if self.uniform_dim is not None:
            return self.radius * u ** (1.0 / self.uniform_dim)
        if not self.pieces:
            radii = np.array([s for s, _ in self.atoms])
            cumulative = np.cumsum([w for _, w in self.atoms])
            index = np.minimum(np.searchsorted(cumulative, u, side="right"), radii.size - 1)
            return radii[index]
        lo = np.zeros_like(u)
        hi = np.full_like(u, self.radius)
        for _ in range(_PPF_STEPS):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return hi


def _polynomial_piece(lo: float, hi: float, density: Polynomial) -> _Piece:
    anti = density.integ(lbnd=0.0)
    return _Piece(lo, hi, density, anti, float(anti(hi - lo)))


def _scaled(pieces: list[tuple[float, float, Polynomial]], radius: float) -> list[_Piece]:
    # density in local unit fractions x = u - lo  ->  local absolute x = radius * (u - lo)
    out = []
    for lo, hi, poly in pieces:
        coef = poly.coef / radius ** (np.arange(poly.coef.size) + 1)
        out.append(_polynomial_piece(lo * radius, hi * radius, Polynomial(coef)))
    return out


def _volume_weight(m: int) -> Polynomial:
    return Polynomial([0.0] * (m - 1) + [1.0])


def _normalized(pieces: list[tuple[float, float, Polynomial]]) -> list[tuple[float, float, Polynomial]]:
    total = sum(float(p.integ(lbnd=0.0)(hi - lo)) for lo, hi, p in pieces)
    return [(lo, hi, p / total) for lo, hi, p in pieces]


def _annulus_pieces(law: AnnulusLaw, m: int) -> list[tuple[float, float, Polynomial]]:
    q, eps, rho = law.interior_mass, law.eps, law.core
    q_core = law.core_share * q
    h, w = law.plateau, law.ramp_width
    shell = 1.0 - eps
    # tent u^(m-1) (1 - u/rho) holds rho^m / (m (m+1)) before scaling
    tent = _volume_weight(m) * Polynomial([1.0, -1.0 / rho])
    tent = tent * (q_core * m * (m + 1) / rho ** m)
    ramp = Polynomial([0.0, h / w])
    plateau = Polynomial([h])
    return [(0.0, rho, tent), (shell - w, shell, ramp), (shell, 1.0, plateau)]


@lru_cache(maxsize=256)
def radial_law(measure: MeasureSpec) -> RadialLaw:
    """Evaluated radial law of a measure (cached, measures are immutable)."""
    law, m, radius = measure.law, measure.m, measure.radius
    if isinstance(law, PointMassLaw):
        return RadialLaw(radius, ((0.0, 1.0),), ())
    if isinstance(law, UniformSphereLaw):
        return RadialLaw(radius, ((law.s, 1.0),), ())
    if isinstance(law, UniformBallLaw):
        pieces = _scaled([(0.0, 1.0, _volume_weight(m) * float(m))], radius)
        return RadialLaw(radius, (), tuple(pieces), uniform_dim=m)
    if isinstance(law, RadialDensityLaw):
        raw = []
        for (u0, u1), (v0, v1) in zip(zip(law.knots, law.knots[1:]), zip(law.values, law.values[1:])):
            slope = (v1 - v0) / (u1 - u0)
            raw.append((u0, u1, Polynomial([v0, slope]) * Polynomial([u0, 1.0]) ** (m - 1)))
        return RadialLaw(radius, (), tuple(_scaled(_normalized(raw), radius)))
    if isinstance(law, AnnulusLaw):
        return RadialLaw(radius, (), tuple(_scaled(_annulus_pieces(law, m), radius)))
    raise DomainError(f"unsupported radial law {law!r}")


# ===========================================================================
#  PUBLIC API
# ===========================================================================

def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator for the named stream (seed, *keys)."""
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(sequence))


def sample_many(measure: MeasureSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    """
    Draw `size` points, shape (size, m).

    Directions are normalised Gaussians, radii come from the inverse radial
    cdf of uniforms drawn after the directions.
    """
    m = measure.m
    gauss = rng.standard_normal((size, m))
    norms = np.linalg.norm(gauss, axis=1, keepdims=True)
    # a zero Gaussian vector has probability zero; fall back to the first axis
    safe = np.where(norms > 0, norms, 1.0)
    directions = np.where(norms > 0, gauss / safe, np.eye(1, m))
    radii = radial_law(measure).ppf(rng.random(size))
    return directions * np.asarray(radii).reshape(-1, 1)


def sample(measure: MeasureSpec, rng: np.random.Generator) -> np.ndarray:
    return sample_many(measure, rng, 1)[0]


def expected_center_distance(measure: MeasureSpec) -> float:
    """E d(x, c) for x drawn from the measure."""
    return radial_law(measure).mean()


def radial_cdf(measure: MeasureSpec, t: float) -> float:
    if not 0.0 <= t <= measure.radius:
        raise DomainError(f"t = {t} outside [0, {measure.radius}]")
    return float(radial_law(measure).cdf(t))


@dataclass(frozen=True)
class AssumptionCheck:
    satisfied: bool
    margin: float
    lhs: float
    rhs: float


def check_counterexample_assumption(measure: MeasureSpec, eps: float) -> AssumptionCheck:
    """
    Mass condition under which seven balls at distance 2.2 defeat the LP:

        (0.292 - 8 eps) P(|x| >= 1 - eps) > 0.279 + 6 eps + (3 + 2 eps) P(|x| < 1 - eps)
    """
    if not 0.0 < eps < 1.0:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    if not math.isclose(measure.radius, 1.0):
        raise DomainError("the counterexample condition is stated for the unit ball")
    inner = radial_law(measure).cdf_left(1.0 - eps)
    lhs = (0.292 - 8 * eps) * (1.0 - inner)
    rhs = 0.279 + 6 * eps + (3 + 2 * eps) * inner
    return AssumptionCheck(lhs > rhs, lhs - rhs, lhs, rhs)


@dataclass(frozen=True)
class GeometrySummary:
    separations: np.ndarray   # D_i = min_{j != i} d(c_i, c_j) - r_i
    delta: float              # min pairwise centre distance
    pairwise: np.ndarray


def geometry(balls: Sequence[BallConfig]) -> GeometrySummary:
    centers = np.array([b.center for b in balls], dtype=float)
    diff = centers[:, None, :] - centers[None, :, :]
    pairwise = np.sqrt((diff ** 2).sum(axis=2))
    k = len(balls)
    if k == 1:
        return GeometrySummary(np.array([math.inf]), math.inf, pairwise)
    off = pairwise + np.diag(np.full(k, math.inf))
    nearest = off.min(axis=1)
    radii = np.array([b.radius for b in balls])
    return GeometrySummary(nearest - radii, float(nearest.min()), pairwise)


def angle_to(points: np.ndarray, axis: Sequence[float]) -> np.ndarray:
    """Angle between each (nonzero) point and a fixed axis."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    norms = np.linalg.norm(points, axis=1)
    return np.arccos(np.clip(points @ axis / norms, -1.0, 1.0))
