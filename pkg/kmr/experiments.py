"""
experiments.py
--------------
Seeded Monte Carlo campaigns over the extended stochastic ball model.

  - recovery_rate               fraction of seeds with exact recovery
  - delta_scan                  recovery rate over a grid of centre distances
  - appendix_b_counterexample   seven annulus balls on a hexagon: witness rate
  - appendix_a_order_mismatch   unequal cluster sizes: a two-centre split of
                                the big ball beats the ground truth

Every trial owns the RNG stream of its seed, so a campaign gives the same
rows whatever the worker count; rows are sorted by seed before they are
returned. Rate thresholds stored in configs are desk-scale calibrations.

Worker count: KMR_THREADS (default 1), overridden by the `threads`
argument of each campaign.
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Callable, Iterable, Literal, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from kmr.analytics import campaign_frame, rate_summary, verdict_counts, wilson_interval
from kmr.certificate import WitnessSettings, certify_recovery, impossibility_witness
from kmr.errors import ConfigError, KmrError
from kmr.instance import (
    Instance,
    build_balls,
    clustering_objective,
    generate,
    generate_with_counts,
    ground_truth,
    layout_centers,
    nearest_center_clustering,
)
from kmr.lp import LpSettings, RecoveryVerdict, decide_recovery
from kmr.measures import BallConfig, MeasureSpec, annulus, check_counterexample_assumption, geometry, uniform_ball
from kmr.numerics import integrate

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Worker count
# ---------------------------------------------------------------------------
_threads_env = os.environ.get("KMR_THREADS", "1")
try:
    THREADS = max(1, int(_threads_env))
except ValueError:
    logger.warning("KMR_THREADS=%r is not an integer; using 1 worker", _threads_env)
    THREADS = 1

HEXAGON_DELTA = 2.2
COUNTEREXAMPLE_EPS = 0.0003
COUNTEREXAMPLE_INTERIOR = 0.002

Method = Literal["certificate", "lp", "witness", "auto"]
Layout = Literal["pair", "simplex", "hexagon7", "line", "custom"]


# ===========================================================================
#  CONFIG
# ===========================================================================

class ExperimentConfig(BaseModel):
    """One campaign: a ball layout, a measure, sample sizes and a seed range."""

    model_config = ConfigDict(extra="forbid")

    name:       str                       = ""
    layout:     Layout                    = "pair"
    delta:      Optional[float]           = Field(None, gt=0)
    m:          int                       = Field(2, ge=1)
    k:          Optional[int]             = Field(None, ge=1)
    centers:    Optional[list[list[float]]] = None
    measure:    Optional[MeasureSpec]     = None
    n:          int                       = Field(100, ge=1)
    weights:    Optional[list[float]]     = None
    counts:     Optional[list[int]]       = None
    seed_start: int                       = Field(0, ge=0)
    trials:     int                       = Field(20, ge=1)
    method:     Method                    = "auto"
    threshold:  Optional[float]           = Field(None, ge=0, le=1)
    lp:         LpSettings                = Field(default_factory=LpSettings)
    witness:    WitnessSettings           = Field(default_factory=WitnessSettings)

    @model_validator(mode="after")
    def _resolve_layout(self) -> "ExperimentConfig":
        fixed = {"pair": 2, "hexagon7": 7}
        if self.layout in fixed:
            if self.k is not None and self.k != fixed[self.layout]:
                raise ValueError(f"layout {self.layout} has k={fixed[self.layout]}, got k={self.k}")
            self.k = fixed[self.layout]
        elif self.layout == "custom":
            if not self.centers:
                raise ValueError("custom layout needs centers")
            if self.k is not None and self.k != len(self.centers):
                raise ValueError(f"{len(self.centers)} centers but k={self.k}")
            self.k = len(self.centers)
        elif self.k is None:
            raise ValueError(f"layout {self.layout} needs k")
        if self.measure is None:
            self.measure = uniform_ball(self.m)
        if self.measure.m != self.m:
            raise ValueError(f"measure dimension {self.measure.m} differs from m={self.m}")
        for label, profile in (("weights", self.weights), ("counts", self.counts)):
            if profile is not None and len(profile) != self.k:
                raise ValueError(f"{label} needs {self.k} entries, got {len(profile)}")
        if self.weights is not None and min(self.weights) < 1:
            raise ValueError("weights must be >= 1")
        if self.counts is not None and min(self.counts) < 1:
            raise ValueError("every ball needs at least one point")
        # raises DomainError (a ValueError) for inconsistent layouts
        layout_centers(self.layout, self.m, self.delta, self.k, self.centers)
        return self

    @property
    def seeds(self) -> list[int]:
        return list(range(self.seed_start, self.seed_start + self.trials))

    def with_delta(self, delta: float) -> "ExperimentConfig":
        return self.model_validate({**self.model_dump(), "delta": delta})

    def balls(self) -> list[BallConfig]:
        centers = layout_centers(self.layout, self.m, self.delta, self.k, self.centers)
        return build_balls(centers, self.measure, self.weights)

    def instance(self, seed: int) -> Instance:
        balls = self.balls()
        if self.counts is not None:
            return generate_with_counts(balls, self.counts, seed, self.n)
        return generate(balls, self.n, seed)


@dataclass(frozen=True)
class TrialRecord:
    seed: int
    verdict: RecoveryVerdict
    wall_ms: float
    delta: float = math.nan
    m: int = 0
    k: int = 0
    n: int = 0

    @property
    def achieved(self) -> bool:
        return self.verdict.achieved

    def row(self) -> dict:
        return {
            "delta":   self.delta,
            "m":       self.m,
            "k":       self.k,
            "n":       self.n,
            "seed":    self.seed,
            "verdict": self.verdict.status,
            "margin":  self.verdict.margin,
            "wall_ms": round(self.wall_ms, 3),
        }


@dataclass(frozen=True)
class CampaignSummary:
    name: str
    records: tuple[TrialRecord, ...]
    threshold: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def stats(self) -> dict:
        return rate_summary(r.achieved for r in self.records)

    @property
    def rate(self) -> float:
        return self.stats["rate"]

    @property
    def interval(self) -> tuple[float, float]:
        s = self.stats
        return s["wilson_low"], s["wilson_high"]

    def frame(self, timings: bool = False) -> pd.DataFrame:
        return campaign_frame((r.row() for r in self.records), timings)

    def report(self) -> dict:
        out = {"name": self.name, **self.stats, "verdicts": verdict_counts(self.frame())}
        if self.threshold is not None:
            out["threshold"] = self.threshold
            out["threshold_note"] = "desk-scale calibration"
            out["meets_threshold"] = self.rate >= self.threshold
        out.update(self.extra)
        return out


# ===========================================================================
#  TRIALS
# ===========================================================================

def _balls_intersect(balls: Sequence[BallConfig]) -> bool:
    g = geometry(balls)
    radii = np.array([b.radius for b in balls])
    reach = radii[:, None] + radii[None, :]
    np.fill_diagonal(reach, 0.0)
    return bool((g.pairwise < reach).any())


def evaluate(instance: Instance, config: ExperimentConfig) -> RecoveryVerdict:
    """Recovery verdict for one instance with the config's method."""
    if instance.k > 1 and _balls_intersect(instance.balls):
        return RecoveryVerdict("undecided", "none", {"reason": "balls intersect; exact recovery is undefined"})

    method = config.method
    if method == "witness" or (method == "auto" and config.layout == "hexagon7"):
        witness = impossibility_witness(instance, settings=config.witness)
        if witness.status == "proves_failure":
            return RecoveryVerdict("failed_witness", "witness",
                                   {"reason": witness.reason, "lower": witness.lower, "upper": witness.upper},
                                   margin=witness.margin)
        if method == "witness":
            return RecoveryVerdict("undecided", "witness", {"reason": witness.reason})

    if method == "certificate":
        try:
            certified = certify_recovery(instance)
        except KmrError as exc:
            return RecoveryVerdict("undecided", "certificate", {"reason": str(exc)})
        verdict = certified.verdict
        if verdict.implies == "unique_optimum":
            return RecoveryVerdict("achieved", "certificate", verdict.ledger(), "proven", 1.0,
                                   verdict.cond_b.margin)
        return RecoveryVerdict("undecided", "certificate", verdict.ledger(), margin=verdict.cond_b.margin)

    return decide_recovery(instance, config.lp, use_certificate=(method != "lp"))


def run_trial(config: ExperimentConfig, seed: int) -> TrialRecord:
    """Generate, decide and time one seed; failures become undecided records."""
    start = time.perf_counter()
    try:
        # records cross process boundaries; drop the LP arrays
        verdict = replace(evaluate(config.instance(seed), config), lp=None)
    except KmrError as exc:
        logger.warning("seed %d: %s", seed, exc)
        verdict = RecoveryVerdict("undecided", "error", {"error": type(exc).__name__, "reason": str(exc)})
    wall_ms = (time.perf_counter() - start) * 1000.0
    return TrialRecord(seed, verdict, wall_ms, float(config.delta) if config.delta else math.nan,
                       config.m, int(config.k), config.n)


def _fan_out(fn: Callable, items: Iterable, threads: Optional[int]) -> list:
    items = list(items)
    workers = min(threads or THREADS, len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def recovery_rate(config: ExperimentConfig, threads: Optional[int] = None) -> CampaignSummary:
    records = _fan_out(partial(run_trial, config), config.seeds, threads)
    records = tuple(sorted(records, key=lambda r: r.seed))
    summary = CampaignSummary(config.name or config.layout, records, config.threshold)
    logger.info("%s: rate %.3f over %d trials", summary.name, summary.rate, len(records))
    return summary


@dataclass(frozen=True)
class DeltaScan:
    table: pd.DataFrame                 # one row per delta
    campaigns: tuple[CampaignSummary, ...]

    def frame(self, timings: bool = False) -> pd.DataFrame:
        rows = [r.row() for c in self.campaigns for r in c.records]
        return campaign_frame(rows, timings)


def delta_scan(config: ExperimentConfig, deltas: Sequence[float], threads: Optional[int] = None) -> DeltaScan:
    """Recovery rate at each delta of a sorted grid; monotonicity is reported, not assumed."""
    deltas = [float(d) for d in deltas]
    if not deltas:
        raise ConfigError("delta grid is empty")
    if deltas != sorted(deltas):
        raise ConfigError(f"delta grid must be sorted, got {deltas}")
    campaigns, rows = [], []
    for delta in deltas:
        summary = recovery_rate(config.with_delta(delta), threads)
        campaigns.append(summary)
        rows.append({"delta": delta, **summary.stats})
    table = pd.DataFrame(rows, columns=["delta", "trials", "successes", "rate", "wilson_low", "wilson_high"])
    table["monotone_so_far"] = table["rate"].cummax() == table["rate"]
    return DeltaScan(table, tuple(campaigns))


# ===========================================================================
#  SEVEN BALLS ON A HEXAGON
# ===========================================================================

def hexagon_constants() -> tuple[float, float]:
    """
    The two integral constants of the hexagon counterexample:

        A = (6/pi) int_0^{pi/6} (sqrt(5.84 - 4.4 cos t) - 1) dt          ~ 0.27816
        B = (1/pi) int_0^{pi/3} (1 - sqrt(2 - 2 cos t)) dt
          + (1/pi) int_0^{arccos 0.6} (1 - sqrt(2.44 - 2.4 cos t)) dt    ~ 0.29417
    """
    a = 6.0 / math.pi * integrate(lambda t: math.sqrt(5.84 - 4.4 * math.cos(t)) - 1.0, 0.0, math.pi / 6)
    b = (integrate(lambda t: 1.0 - math.sqrt(2.0 - 2.0 * math.cos(t)), 0.0, math.pi / 3)
         + integrate(lambda t: 1.0 - math.sqrt(2.44 - 2.4 * math.cos(t)), 0.0, math.acos(0.6))) / math.pi
    return a, b


def hexagon_config(n: int, seeds: int, eps: float = COUNTEREXAMPLE_EPS,
                   interior_mass: float = COUNTEREXAMPLE_INTERIOR, method: Method = "witness") -> ExperimentConfig:
    return ExperimentConfig(
        name="hexagon7-annulus",
        layout="hexagon7",
        delta=HEXAGON_DELTA,
        m=2,
        measure=annulus(2, eps, interior_mass),
        n=n,
        trials=seeds,
        method=method,
        witness=WitnessSettings(eps=eps),
    )


def appendix_b_counterexample(
    n: int,
    seeds: int,
    eps: float = COUNTEREXAMPLE_EPS,
    interior_mass: float = COUNTEREXAMPLE_INTERIOR,
    lp_n: Optional[int] = None,
    lp_seeds: int = 20,
    threads: Optional[int] = None,
) -> CampaignSummary:
    """
    Witness campaign on the hexagon layout; optionally LP solves at `lp_n`
    points per ball. The summary's `rate` counts achieved recoveries, so the
    failure-proof rate is reported separately.
    """
    config = hexagon_config(n, seeds, eps, interior_mass)
    check = check_counterexample_assumption(config.measure, eps)
    if not check.satisfied:
        raise ConfigError(f"annulus(eps={eps}, interior={interior_mass}) fails the mass condition "
                          f"(margin {check.margin:.6g})")
    a, b = hexagon_constants()
    summary = recovery_rate(config, threads)
    proofs = sum(r.verdict.status == "failed_witness" for r in summary.records)
    low, high = wilson_interval(proofs, len(summary.records))
    extra = {
        "constant_A": a,
        "constant_B": b,
        "assumption_margin": check.margin,
        "witness_rate": proofs / len(summary.records),
        "witness_wilson_low": low,
        "witness_wilson_high": high,
    }
    if lp_n is not None:
        lp_config = hexagon_config(lp_n, lp_seeds, eps, interior_mass, method="lp")
        lp_summary = recovery_rate(lp_config, threads)
        extra["lp_n"] = lp_n
        extra["lp_not_achieved_rate"] = 1.0 - lp_summary.rate
        extra["lp_verdicts"] = verdict_counts(lp_summary.frame())
    return CampaignSummary(config.name, summary.records, None, extra)


# ===========================================================================
#  CLUSTER SIZES OF DIFFERENT ORDER
# ===========================================================================

def order_mismatch_trial(n: int, seed: int, delta: float = 4.0, m: int = 2, control: bool = False) -> dict:
    """
    Ground truth against the split clustering: two centres inside ball 1
    (the samples nearest to -e1/2 and to its centre), every point to the
    nearer of the two.
    """
    n2 = n if control else math.ceil(math.sqrt(n))
    balls = build_balls(layout_centers("pair", m, delta), uniform_ball(m))
    instance = generate_with_counts(balls, (n, n2), seed, n)
    truth = ground_truth(instance).objective

    ball1 = instance.members(0)
    probe = np.zeros(m)
    probe[0] = -0.5
    first = ball1[int(np.argmin(np.linalg.norm(instance.points[ball1] - probe, axis=1)))]
    second = ball1[int(np.argmin(np.linalg.norm(instance.points[ball1], axis=1)))]
    if first == second:
        alternative = math.inf
    else:
        split = nearest_center_clustering(instance.points, (int(first), int(second)))
        alternative = clustering_objective(instance.points, split)
    better = alternative < truth - 1e-9 * (1.0 + truth)
    return {"n": n, "n1": n, "n2": n2, "seed": seed, "truth": truth,
            "alternative": alternative, "better": bool(better)}


def _order_mismatch_job(args: tuple, delta: float, m: int, control: bool) -> dict:
    n, seed = args
    return order_mismatch_trial(n, seed, delta, m, control)


def appendix_a_order_mismatch(
    ns: Sequence[int],
    seeds: int,
    delta: float = 4.0,
    m: int = 2,
    control: bool = False,
    seed_start: int = 0,
    threads: Optional[int] = None,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """(per-n summary, per-trial table)."""
    if not ns or min(ns) < 1:
        raise ConfigError("every n must be >= 1")
    jobs = [(int(n), s) for n in ns for s in range(seed_start, seed_start + seeds)]
    rows = _fan_out(partial(_order_mismatch_job, delta=delta, m=m, control=control), jobs, threads)
    trials = pd.DataFrame(rows).sort_values(["n", "seed"], kind="mergesort").reset_index(drop=True)
    summary = []
    for n, group in trials.groupby("n", sort=True):
        better = int(group["better"].sum())
        low, high = wilson_interval(better, len(group))
        summary.append({"n": int(n), "n2": int(group["n2"].iloc[0]), "trials": len(group),
                        "better": better, "rate": better / len(group),
                        "wilson_low": low, "wilson_high": high})
    return pd.DataFrame(summary), trials


# ===========================================================================
#  GNUPLOT
# ===========================================================================

def emit_gnuplot_script(data_path, x: str, y: str, title: str = "") -> str:
    """A gnuplot script plotting column `y` against `x` of a CSV file."""
    data_path = Path(data_path)
    output = data_path.with_suffix(".png").name
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set terminal pngcairo size 800,500",
        f"set output '{output}'",
        f"set title '{title or data_path.stem}'",
        f"set xlabel '{x}'",
        f"set ylabel '{y}'",
        "set grid",
        f"plot '{data_path.name}' using '{x}':'{y}' with linespoints",
    ]
    return "\n".join(lines) + "\n"
