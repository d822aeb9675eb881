import json
import math

import numpy as np
import pytest

from kmr.errors import ConfigError
from kmr.experiments import ExperimentConfig
from kmr.lp import LpSettings, build, decide_recovery, solve
from kmr.storage import (
    FORMAT_VERSION,
    dumps,
    load_config,
    load_dense,
    load_instance,
    read_json,
    save_instance,
    save_solution,
)


def test_instance_round_trip(tmp_path, pair_instance):
    path = tmp_path / "instance.json"
    save_instance(pair_instance, path)
    loaded = load_instance(path)
    np.testing.assert_array_equal(loaded.points, pair_instance.points)
    np.testing.assert_array_equal(loaded.labels, pair_instance.labels)
    assert loaded.balls == pair_instance.balls
    assert loaded.seed == pair_instance.seed
    assert loaded.counts == pair_instance.counts
    assert loaded.n == pair_instance.n


def test_point_mass_instance_round_trip(tmp_path, point_mass_instance):
    path = tmp_path / "instance.json"
    save_instance(point_mass_instance, path)
    assert load_instance(path).balls[0].measure.law.kind == "point_mass_origin"


def test_header_must_match_balls(tmp_path, pair_instance):
    path = tmp_path / "instance.json"
    save_instance(pair_instance, path)
    data = json.loads(path.read_text())
    data["k"] = 3
    path.write_text(json.dumps(data))
    with pytest.raises(ConfigError, match="disagree"):
        load_instance(path)


def test_malformed_instance(tmp_path, pair_instance):
    path = tmp_path / "instance.json"
    save_instance(pair_instance, path)
    data = json.loads(path.read_text())
    del data["balls"]
    path.write_text(json.dumps(data))
    with pytest.raises(ConfigError, match="malformed"):
        load_instance(path)


def test_read_json_errors(tmp_path):
    with pytest.raises(ConfigError, match="no such file"):
        read_json(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        read_json(bad)
    future = tmp_path / "future.json"
    future.write_text(json.dumps({"format": FORMAT_VERSION + 1}))
    with pytest.raises(ConfigError, match="unsupported format"):
        read_json(future)


def test_dumps_marks_format_and_non_finite_values():
    data = json.loads(dumps({"a": math.nan, "b": [math.inf, np.float64(2.0)], "c": np.int64(3)}))
    assert data == {"format": FORMAT_VERSION, "a": "nan", "b": ["inf", 2.0], "c": 3}


def test_solution_file(tmp_path, collinear_points):
    settings = LpSettings(backend="simplex")
    solution, dual = solve(build(collinear_points, k=2), settings)
    path = tmp_path / "solution.json"
    save_solution(solution, dual, path)
    data = read_json(path)
    assert data["kind"] == "solution"
    assert data["objective"] == pytest.approx(4.0)
    np.testing.assert_allclose(load_dense(data["z"], 6), solution.z, atol=1e-9)
    np.testing.assert_allclose(data["dual"]["alpha"], dual.alpha)
    assert "verdict" not in data


def test_solution_file_with_verdict(tmp_path, point_mass_instance):
    verdict = decide_recovery(point_mass_instance)
    solution, dual = solve(build(point_mass_instance), LpSettings(backend="highs"))
    path = tmp_path / "solution.json"
    save_solution(solution, dual, path, verdict)
    data = read_json(path)
    assert data["verdict"]["status"] == "achieved"
    assert data["verdict"]["method"] == "certificate"


def test_load_config(tmp_path):
    path = tmp_path / "campaign.json"
    path.write_text(json.dumps({"layout": "pair", "delta": 3.5, "trials": 4}))
    config = load_config(path, ExperimentConfig)
    assert config.k == 2
    assert config.seeds == [0, 1, 2, 3]


def test_load_config_rejects_unknown_fields(tmp_path):
    path = tmp_path / "campaign.json"
    path.write_text(json.dumps({"layout": "pair", "delta": 3.5, "colour": "red"}))
    with pytest.raises(ConfigError):
        load_config(path, ExperimentConfig)
    path.write_text(json.dumps({"format": 9, "layout": "pair", "delta": 3.5}))
    with pytest.raises(ConfigError, match="unsupported format"):
        load_config(path, ExperimentConfig)
