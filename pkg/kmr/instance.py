"""
instance.py
-----------
Instances of the extended stochastic ball model: ball layouts, point
generation, medians, ground-truth clusterings and the exhaustive
integer-program oracle used on tiny instances.

Distances are plain Euclidean norms from scipy's cdist, evaluated in row
blocks so that medians of 10^4 points never build an N x N matrix.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from kmr.errors import DomainError, InfeasibleClusteringError, SizeGuardError
from kmr.measures import BallConfig, MeasureSpec, make_ball, rng_stream, sample_many

logger = logging.getLogger(__name__)

BRUTE_FORCE_GUARD = 10_000_000
DISTANCE_BLOCK = 1024


# ===========================================================================
#  LAYOUTS
# ===========================================================================

LAYOUTS = ("pair", "simplex", "hexagon7", "line", "custom")


def layout_centers(
    kind: str,
    m: int,
    delta: Optional[float] = None,
    k: Optional[int] = None,
    centers: Optional[Sequence[Sequence[float]]] = None,
) -> np.ndarray:
    """
    Ball centres for a named layout, shape (k, m).

    pair      c1 = 0, c2 = delta * e1
    simplex   ci = delta / sqrt(2) * ei, pairwise distance delta (needs m >= k)
    hexagon7  c1 = 0, ci = delta * (cos, sin)(-(i - 2) pi / 3) for i = 2..7 (m = 2)
    line      ci = i * delta * e1 (m = 1)
    custom    the given centres
    """
    if kind == "custom":
        if not centers:
            raise DomainError("custom layout needs explicit centers")
        out = np.asarray(centers, dtype=float)
        if out.ndim != 2 or out.shape[1] != m:
            raise DomainError(f"custom centers must have shape (k, {m})")
        return out
    if delta is None or not delta > 0:
        raise DomainError(f"layout {kind!r} needs a positive delta")
    if kind == "pair":
        out = np.zeros((2, m))
        out[1, 0] = delta
        return out
    if kind == "simplex":
        if k is None or k < 1 or m < k:
            raise DomainError(f"simplex layout needs 1 <= k <= m, got k={k}, m={m}")
        out = np.zeros((k, m))
        out[np.arange(k), np.arange(k)] = delta / math.sqrt(2.0)
        return out
    if kind == "hexagon7":
        if m != 2:
            raise DomainError("hexagon7 layout is planar (m = 2)")
        angles = -np.arange(6) * math.pi / 3
        ring = delta * np.column_stack([np.cos(angles), np.sin(angles)])
        return np.vstack([np.zeros((1, 2)), ring])
    if kind == "line":
        if m != 1:
            raise DomainError("line layout is one-dimensional (m = 1)")
        if k is None or k < 1:
            raise DomainError("line layout needs k >= 1")
        return (np.arange(1, k + 1) * delta).reshape(-1, 1)
    raise DomainError(f"unknown layout {kind!r}; expected one of {LAYOUTS}")


def build_balls(
    centers: np.ndarray,
    measure: MeasureSpec,
    weights: Optional[Sequence[float]] = None,
) -> list[BallConfig]:
    """One ball per centre, all carrying the same measure."""
    weights = list(weights) if weights is not None else [1.0] * len(centers)
    if len(weights) != len(centers):
        raise DomainError(f"{len(weights)} weights for {len(centers)} centers")
    return [make_ball(c, measure, w) for c, w in zip(centers, weights)]


# ===========================================================================
#  TYPES
# ===========================================================================

@dataclass(frozen=True, eq=False)
class Instance:
    """Points, ground-truth labels and the balls they were drawn from."""

    points: np.ndarray
    labels: np.ndarray
    balls: tuple[BallConfig, ...]
    n: int
    seed: int
    counts: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        points = np.ascontiguousarray(self.points, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int64)
        if points.ndim != 2 or labels.shape != (points.shape[0],):
            raise DomainError("points must be (N, m) with one label per point")
        k = len(self.balls)
        if k == 0 or labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
            raise DomainError("labels must index the balls")
        counts = tuple(int(c) for c in np.bincount(labels, minlength=k))
        if self.counts and tuple(self.counts) != counts:
            raise DomainError(f"recorded counts {self.counts} disagree with labels {counts}")
        points.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "balls", tuple(self.balls))
        object.__setattr__(self, "counts", counts)

    @property
    def k(self) -> int:
        return len(self.balls)

    @property
    def m(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def members(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.labels == i)

    @cached_property
    def distances(self) -> np.ndarray:
        """Full N x N distance matrix; only for instances the LP can take."""
        return cdist(self.points, self.points)

    def containment_violation(self) -> float:
        """Largest amount by which a point sticks out of its ball."""
        centers = np.array([b.center for b in self.balls])[self.labels]
        radii = np.array([b.radius for b in self.balls])[self.labels]
        return float(np.max(np.linalg.norm(self.points - centers, axis=1) - radii, initial=-math.inf))

    @classmethod
    def from_points(cls, points, labels, balls: Sequence[BallConfig], seed: int = 0) -> "Instance":
        labels = np.asarray(labels, dtype=np.int64)
        counts = np.bincount(labels, minlength=len(balls))
        return cls(np.asarray(points, dtype=float), labels, tuple(balls), int(counts.min()), seed)


@dataclass(frozen=True, eq=False)
class Clustering:
    """k centres (point indices) and the cluster slot of every point."""

    centers: tuple[int, ...]
    assignment: np.ndarray

    def __post_init__(self) -> None:
        assignment = np.asarray(self.assignment, dtype=np.int64)
        centers = tuple(int(c) for c in self.centers)
        k = len(centers)
        if k == 0 or len(set(centers)) != k:
            raise InfeasibleClusteringError("a clustering needs k distinct centers")
        if assignment.ndim != 1 or assignment.size == 0:
            raise InfeasibleClusteringError("assignment must cover every point")
        if assignment.min() < 0 or assignment.max() >= k:
            raise InfeasibleClusteringError("assignment refers to a missing center")
        if any(c < 0 or c >= assignment.size for c in centers):
            raise InfeasibleClusteringError("center index out of range")
        if any(assignment[c] != i for i, c in enumerate(centers)):
            raise InfeasibleClusteringError("every center must be assigned to itself")
        assignment.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "assignment", assignment)

    @property
    def k(self) -> int:
        return len(self.centers)

    def center_of(self) -> np.ndarray:
        """Centre point index of every point."""
        return np.asarray(self.centers)[self.assignment]

    def members(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == i)


@dataclass(frozen=True)
class MedianResult:
    index: int
    total: float
    gap: float   # second-best sum minus best sum


@dataclass(frozen=True)
class GroundTruthSolution:
    clustering: Clustering
    objective: float
    medians: tuple[MedianResult, ...]

    @property
    def cluster_costs(self) -> np.ndarray:
        return np.array([m.total for m in self.medians])


@dataclass(frozen=True)
class BruteForceResult:
    clustering: Clustering
    objective: float
    unique: bool
    second_best: float


# ===========================================================================
#  GENERATION
# ===========================================================================

def realized_counts(balls: Sequence[BallConfig], n: int) -> list[int]:
    """n_i = round_half_up(beta_i * n), each at least 1."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    counts = [int(math.floor(b.weight * n + 0.5)) for b in balls]
    if min(counts) < 1:
        raise DomainError(f"ball counts {counts} must all be positive")
    return counts


def generate_with_counts(
    balls: Sequence[BallConfig],
    counts: Sequence[int],
    seed: int,
    n: Optional[int] = None,
) -> Instance:
    """Draw counts[i] points from ball i; ball i uses stream (seed, i)."""
    if not balls:
        raise DomainError("at least one ball is required")
    if len(counts) != len(balls) or min(counts) < 1:
        raise DomainError(f"need one positive count per ball, got {list(counts)}")
    m = balls[0].m
    if any(b.m != m for b in balls):
        raise DomainError("all balls must live in the same dimension")
    chunks, labels = [], []
    for i, (ball, count) in enumerate(zip(balls, counts)):
        rng = rng_stream(seed, i)
        chunks.append(ball.center_array + sample_many(ball.measure, rng, int(count)))
        labels.append(np.full(int(count), i))
    instance = Instance(
        np.vstack(chunks),
        np.concatenate(labels),
        tuple(balls),
        int(n if n is not None else min(counts)),
        int(seed),
        tuple(int(c) for c in counts),
    )
    logger.debug("generated %d points in %d balls (seed %d)", instance.size, instance.k, seed)
    return instance


def generate(balls: Sequence[BallConfig], n: int, seed: int) -> Instance:
    return generate_with_counts(balls, realized_counts(balls, n), seed, n)


# ===========================================================================
#  DISTANCES / MEDIANS
# ===========================================================================

def iter_distance_blocks(
    rows: np.ndarray, cols: np.ndarray, block: int = DISTANCE_BLOCK
) -> Iterator[tuple[int, int, np.ndarray]]:
    for start in range(0, rows.shape[0], block):
        stop = min(start + block, rows.shape[0])
        yield start, stop, cdist(rows[start:stop], cols)


def distance_row_sums(points: np.ndarray) -> np.ndarray:
    sums = np.empty(points.shape[0])
    for start, stop, block in iter_distance_blocks(points, points):
        sums[start:stop] = block.sum(axis=1)
    return sums


def median_of(points) -> MedianResult:
    """
    Member of `points` minimising the sum of distances to all of them.

    Ties go to the lowest index.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] == 0:
        raise DomainError("median of an empty point set")
    sums = distance_row_sums(points)
    best = int(np.argmin(sums))
    if sums.size == 1:
        return MedianResult(best, float(sums[best]), math.inf)
    second = float(np.partition(sums, 1)[1])
    return MedianResult(best, float(sums[best]), second - float(sums[best]))


def ground_truth(instance: Instance) -> GroundTruthSolution:
    """Per-ball medians as centres, every point assigned to its own ball."""
    centers, medians = [], []
    for i in range(instance.k):
        members = instance.members(i)
        result = median_of(instance.points[members])
        medians.append(MedianResult(int(members[result.index]), result.total, result.gap))
        centers.append(int(members[result.index]))
    clustering = Clustering(tuple(centers), instance.labels.copy())
    objective = float(sum(m.total for m in medians))
    return GroundTruthSolution(clustering, objective, tuple(medians))


def clustering_objective(points: np.ndarray, clustering: Clustering) -> float:
    centers = points[clustering.center_of()]
    return float(np.linalg.norm(points - centers, axis=1).sum())


def nearest_center_clustering(points: np.ndarray, centers: Sequence[int]) -> Clustering:
    """Assign every point to its nearest centre; ties go to the earlier centre."""
    centers = [int(c) for c in centers]
    assignment = np.empty(points.shape[0], dtype=np.int64)
    for start, stop, block in iter_distance_blocks(points, points[centers]):
        assignment[start:stop] = np.argmin(block, axis=1)
    assignment[centers] = np.arange(len(centers))
    return Clustering(tuple(centers), assignment)


# ===========================================================================
#  INTEGER PROGRAM ORACLE
# ===========================================================================

def brute_force_ip(points, k: int, guard: int = BRUTE_FORCE_GUARD) -> BruteForceResult:
    """
    Optimal k-median clustering by enumerating every set of k centres.

    Raises SizeGuardError when C(N, k) * N * k exceeds `guard`.
    """
    points = np.asarray(points, dtype=float)
    N = points.shape[0]
    if not 1 <= k <= N:
        raise DomainError(f"need 1 <= k <= N, got k={k}, N={N}")
    work = math.comb(N, k) * N * k
    if work > guard:
        raise SizeGuardError(f"brute force needs {work} distance lookups (guard {guard})")
    dist = cdist(points, points)
    best, second, best_set = math.inf, math.inf, None
    for combo in itertools.combinations(range(N), k):
        value = float(dist[list(combo)].min(axis=0).sum())
        if value < best:
            best, second, best_set = value, best, combo
        elif value < second:
            second = value
    clustering = nearest_center_clustering(points, best_set)
    unique = second - best > 1e-9 * (1.0 + best)
    return BruteForceResult(clustering, best, unique, second)
