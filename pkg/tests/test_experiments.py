import math
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.integrate import simpson

from kmr.analytics import write_csv
from kmr.errors import ConfigError
from kmr.experiments import (
    CampaignSummary,
    ExperimentConfig,
    appendix_a_order_mismatch,
    hexagon_constants,
    appendix_b_counterexample,
    delta_scan,
    emit_gnuplot_script,
    evaluate,
    hexagon_config,
    order_mismatch_trial,
    recovery_rate,
    run_trial,
)
from kmr.measures import MeasureSpec, PointMassLaw, uniform_ball
from kmr.storage import load_config

PRESETS = Path(__file__).resolve().parent.parent / "data" / "campaigns"


@pytest.fixture
def point_mass_config():
    return ExperimentConfig(
        name="point-masses",
        layout="pair",
        delta=3.0,
        measure=MeasureSpec(m=2, law=PointMassLaw()),
        n=5,
        trials=3,
        method="certificate",
    )


# ── config ──────────────────────────────────────────────────

def test_fixed_layouts_resolve_k():
    assert ExperimentConfig(layout="pair", delta=3.0).k == 2
    assert ExperimentConfig(layout="hexagon7", delta=2.2).k == 7
    custom = ExperimentConfig(layout="custom", centers=[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]])
    assert custom.k == 3


def test_default_measure_follows_dimension():
    config = ExperimentConfig(layout="pair", delta=3.0, m=4)
    assert config.measure == uniform_ball(4)


@pytest.mark.parametrize("fields", [
    {"layout": "pair", "delta": 3.0, "k": 3},
    {"layout": "simplex", "delta": 3.0},
    {"layout": "custom"},
    {"layout": "pair", "delta": 3.0, "weights": [1.0]},
    {"layout": "pair", "delta": 3.0, "weights": [1.0, 0.5]},
    {"layout": "pair", "delta": 3.0, "counts": [4, 0]},
    {"layout": "pair", "delta": 3.0, "m": 3, "measure": uniform_ball(2)},
    {"layout": "pair", "delta": 3.0, "trials": 0},
    {"layout": "pair", "delta": 3.0, "method": "guess"},
])
def test_invalid_configs(fields):
    with pytest.raises(ValidationError):
        ExperimentConfig(**fields)


def test_with_delta_copies(point_mass_config):
    moved = point_mass_config.with_delta(4.5)
    assert moved.delta == 4.5
    assert point_mass_config.delta == 3.0
    assert moved.measure == point_mass_config.measure


def test_instances_are_reproducible():
    config = ExperimentConfig(layout="pair", delta=3.0, n=20)
    np.testing.assert_array_equal(config.instance(7).points, config.instance(7).points)
    assert not np.array_equal(config.instance(7).points, config.instance(8).points)


def test_explicit_counts():
    config = ExperimentConfig(layout="pair", delta=3.0, counts=[5, 3])
    assert config.instance(0).counts == (5, 3)


# ── trials ──────────────────────────────────────────────────

def test_overlapping_balls_are_undecided():
    config = ExperimentConfig(layout="pair", delta=1.5, n=10)
    verdict = evaluate(config.instance(0), config)
    assert verdict.status == "undecided"
    assert "intersect" in verdict.evidence["reason"]


def test_certificate_trial(point_mass_config):
    record = run_trial(point_mass_config, 4)
    assert record.achieved
    assert record.verdict.method == "certificate"
    row = record.row()
    assert (row["delta"], row["m"], row["k"], row["n"], row["seed"]) == (3.0, 2, 2, 5, 4)
    assert row["verdict"] == "achieved"
    assert row["wall_ms"] >= 0.0


def test_witness_method_without_proof_is_undecided():
    config = ExperimentConfig(layout="pair", delta=4.0, n=30, method="witness")
    verdict = evaluate(config.instance(0), config)
    assert verdict.status == "undecided"
    assert verdict.method == "witness"


def test_lp_method_on_small_pair():
    config = ExperimentConfig(layout="pair", delta=4.0, n=6, method="lp")
    verdict = evaluate(config.instance(3), config)
    assert verdict.method == "lp"
    assert verdict.status == "achieved"


# ── campaigns ───────────────────────────────────────────────

def test_recovery_rate(point_mass_config):
    summary = recovery_rate(point_mass_config, threads=1)
    assert [r.seed for r in summary.records] == [0, 1, 2]
    assert summary.rate == 1.0
    low, high = summary.interval
    assert low < 1.0
    assert high == pytest.approx(1.0)
    report = summary.report()
    assert report["name"] == "point-masses"
    assert report["verdicts"] == {"achieved": 3}


def test_rows_do_not_depend_on_worker_count():
    config = ExperimentConfig(layout="pair", delta=3.5, n=30, trials=4, method="certificate")
    serial = recovery_rate(config, threads=1).frame()
    pooled = recovery_rate(config, threads=2).frame()
    assert serial.equals(pooled)


def test_seeded_rerun_writes_identical_csv(tmp_path):
    config = ExperimentConfig(layout="pair", delta=3.5, n=30, trials=4, method="certificate")
    first, second = tmp_path / "first.csv", tmp_path / "second.csv"
    write_csv(recovery_rate(config, threads=1).frame(), first)
    write_csv(recovery_rate(config, threads=2).frame(), second)
    assert first.read_bytes() == second.read_bytes()


def test_threshold_report(point_mass_config):
    summary = CampaignSummary("x", recovery_rate(point_mass_config, threads=1).records, threshold=0.9)
    report = summary.report()
    assert report["meets_threshold"] is True
    assert report["threshold"] == 0.9


def test_delta_scan(point_mass_config):
    scan = delta_scan(point_mass_config, [3.0, 4.0], threads=1)
    assert scan.table["delta"].tolist() == [3.0, 4.0]
    assert scan.table["rate"].tolist() == [1.0, 1.0]
    assert scan.table["monotone_so_far"].all()
    assert len(scan.frame()) == 6


@pytest.mark.parametrize("deltas", [[], [4.0, 3.0]])
def test_delta_scan_grid_checks(point_mass_config, deltas):
    with pytest.raises(ConfigError):
        delta_scan(point_mass_config, deltas, threads=1)


# ── hexagon counterexample ──────────────────────────────────

def _simpson(f, lo, hi, points=200_001):
    t = np.linspace(lo, hi, points)
    return simpson(f(t), x=t)


def test_hexagon_constants():
    a, b = hexagon_constants()
    expected_a = 6.0 / math.pi * _simpson(lambda t: np.sqrt(5.84 - 4.4 * np.cos(t)) - 1.0, 0.0, math.pi / 6)
    expected_b = (_simpson(lambda t: 1.0 - np.sqrt(2.0 - 2.0 * np.cos(t)), 0.0, math.pi / 3)
                  + _simpson(lambda t: 1.0 - np.sqrt(2.44 - 2.4 * np.cos(t)), 0.0, math.acos(0.6))) / math.pi
    assert a == pytest.approx(expected_a, abs=1e-6)
    assert b == pytest.approx(expected_b, abs=1e-6)
    assert a == pytest.approx(0.278160, abs=1e-6)
    assert b == pytest.approx(0.294169, abs=1e-6)
    assert a < 0.279 and b > 0.292


def test_hexagon_config():
    config = hexagon_config(50, 3)
    assert config.k == 7
    assert config.delta == 2.2
    assert config.measure.law.kind == "annulus"
    assert config.witness.eps == config.measure.law.eps


def test_wide_shell_fails_the_mass_condition():
    with pytest.raises(ConfigError, match="mass condition"):
        appendix_b_counterexample(50, 2, eps=0.01, interior_mass=0.001, threads=1)


# ── unequal cluster sizes ───────────────────────────────────

def test_order_mismatch_trial_sizes():
    row = order_mismatch_trial(100, seed=0)
    assert (row["n1"], row["n2"]) == (100, 10)
    assert math.isfinite(row["truth"])
    assert order_mismatch_trial(100, seed=0, control=True)["n2"] == 100


def test_order_mismatch_campaign():
    summary, trials = appendix_a_order_mismatch([50, 80], seeds=2, threads=1)
    assert summary["n"].tolist() == [50, 80]
    assert summary["n2"].tolist() == [8, 9]
    assert len(trials) == 4
    assert trials["seed"].tolist() == [0, 1, 0, 1]
    with pytest.raises(ConfigError):
        appendix_a_order_mismatch([], seeds=2)


def test_gnuplot_script(tmp_path):
    script = emit_gnuplot_script(tmp_path / "scan.csv", "delta", "rate")
    assert "set output 'scan.png'" in script
    assert "plot 'scan.csv' using 'delta':'rate' with linespoints" in script


@pytest.mark.parametrize("path", sorted(PRESETS.glob("*.json")), ids=lambda p: p.stem)
def test_campaign_presets_validate(path):
    config = load_config(path, ExperimentConfig)
    assert config.name
    assert len(config.balls()) == config.k
