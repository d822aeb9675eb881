"""
analytics.py
------------
Summary statistics for recovery campaigns: success rates with Wilson
intervals, verdict tallies and partition agreement scores.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import adjusted_rand_score

CSV_COLUMNS = ["delta", "m", "k", "n", "seed", "verdict", "margin", "wall_ms"]


def wilson_interval(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def partition_agreement(labels: Sequence[int], assigned: Sequence[int]) -> float:
    """Adjusted Rand index between ground-truth labels and a recovered partition."""
    return float(adjusted_rand_score(np.asarray(labels), np.asarray(assigned)))


def rate_summary(outcomes: Iterable[bool]) -> dict:
    """
    Compute the success summary of a campaign:
      - trials
      - successes
      - rate
      - wilson_low / wilson_high  (95% interval)
    """
    outcomes = [bool(o) for o in outcomes]
    trials, successes = len(outcomes), sum(outcomes)
    low, high = wilson_interval(successes, trials)
    return {
        "trials":      trials,
        "successes":   successes,
        "rate":        successes / trials if trials else 0.0,
        "wilson_low":  low,
        "wilson_high": high,
    }


def verdict_counts(frame: pd.DataFrame) -> dict:
    """Number of trials per verdict, most common first."""
    if frame.empty:
        return {}
    return {str(k): int(v) for k, v in frame["verdict"].value_counts().items()}


def campaign_frame(rows: Iterable[dict], timings: bool = False) -> pd.DataFrame:
    """
    Trial rows as a table with the documented CSV columns, sorted by
    (delta, seed). `wall_ms` stays empty unless `timings` is set.
    """
    frame = pd.DataFrame(list(rows), columns=CSV_COLUMNS)
    if not timings:
        frame["wall_ms"] = ""
    if frame.empty:
        return frame
    return frame.sort_values(["delta", "seed"], kind="mergesort").reset_index(drop=True)


def write_csv(frame: pd.DataFrame, path) -> None:
    frame.to_csv(path, index=False, float_format="%.12g", lineterminator="\n")
