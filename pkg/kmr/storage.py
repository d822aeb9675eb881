"""
storage.py
----------
File I/O for the artifacts the CLI reads and writes.

Every JSON file carries "format": 1. Instances store the ball configs next
to the realised points, so loading reproduces the in-memory instance
exactly (floats are written with repr precision by the json module).
Campaign tables are CSV and go through kmr.analytics.write_csv.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from pydantic import ValidationError

from kmr.errors import ConfigError
from kmr.instance import Instance
from kmr.measures import BallConfig

FORMAT_VERSION = 1
SPARSE_CUTOFF = 1e-9

PathLike = Union[str, Path]


# ---------------------------------------------------------------------------
# Generic helpers
# ---------------------------------------------------------------------------

def _jsonable(value: Any) -> Any:
    """numpy scalars/arrays to plain Python; non-finite floats to strings."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def dumps(payload: dict) -> str:
    return json.dumps({"format": FORMAT_VERSION, **_jsonable(payload)}, indent=2, sort_keys=False) + "\n"


def write_json(payload: dict, path: PathLike) -> None:
    Path(path).write_text(dumps(payload), encoding="utf-8")


def read_json(path: PathLike) -> dict:
    """Parse a versioned artifact; a missing file or wrong version is a ConfigError."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    version = data.get("format")
    if version != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported format {version!r}, expected {FORMAT_VERSION}")
    return data


# ---------------------------------------------------------------------------
# Instances
# ---------------------------------------------------------------------------

def instance_payload(instance: Instance) -> dict:
    return {
        "kind":   "instance",
        "m":      instance.m,
        "k":      instance.k,
        "n":      instance.n,
        "seed":   instance.seed,
        "counts": list(instance.counts),
        "balls":  [b.model_dump(mode="json") for b in instance.balls],
        "points": instance.points,
        "labels": instance.labels,
    }


def save_instance(instance: Instance, path: PathLike) -> None:
    write_json(instance_payload(instance), path)


def load_instance(path: PathLike) -> Instance:
    data = read_json(path)
    try:
        balls = [BallConfig.model_validate(b) for b in data["balls"]]
        points = np.asarray(data["points"], dtype=float)
        labels = np.asarray(data["labels"], dtype=np.int64)
        instance = Instance(
            points=points,
            labels=labels,
            balls=tuple(balls),
            n=int(data.get("n", 0)),
            seed=int(data["seed"]),
            counts=tuple(int(c) for c in data.get("counts", np.bincount(labels, minlength=len(balls)))),
        )
    except (KeyError, TypeError, ValidationError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed instance ({exc})") from exc
    if instance.m != int(data["m"]) or instance.k != int(data["k"]):
        raise ConfigError(f"{path}: header m/k disagree with the stored balls")
    return instance


# ---------------------------------------------------------------------------
# Solutions and verdicts
# ---------------------------------------------------------------------------

def _sparse(matrix: np.ndarray) -> list:
    rows, cols = np.nonzero(np.abs(matrix) > SPARSE_CUTOFF)
    return [[int(p), int(q), float(matrix[p, q])] for p, q in zip(rows, cols)]


def solution_payload(solution, dual, verdict=None) -> dict:
    """LP primal (y, sparse z), dual (alpha, omega, sparse beta) and an optional verdict."""
    payload = {
        "kind":      "solution",
        "backend":   solution.backend,
        "objective": solution.objective,
        "y":         solution.y,
        "z":         _sparse(solution.z),
        "dual": {
            "alpha": dual.alpha,
            "omega": dual.omega,
            "beta":  _sparse(dual.beta),
        },
    }
    if verdict is not None:
        payload["verdict"] = verdict_payload(verdict)
    return payload


def verdict_payload(verdict) -> dict:
    return {
        "status":     verdict.status,
        "method":     verdict.method,
        "uniqueness": verdict.uniqueness,
        "ari":        verdict.ari,
        "margin":     verdict.margin,
        "evidence":   verdict.evidence,
    }


def save_solution(solution, dual, path: PathLike, verdict=None) -> None:
    write_json(solution_payload(solution, dual, verdict), path)


def load_dense(entries: list, size: int) -> np.ndarray:
    """Inverse of the sparse [p, q, value] encoding."""
    out = np.zeros((size, size))
    for p, q, value in entries:
        out[int(p), int(q)] = float(value)
    return out


# ---------------------------------------------------------------------------
# Experiment configs
# ---------------------------------------------------------------------------

def load_config_data(path: PathLike) -> dict:
    """Raw config object; "format" may be omitted, when present it must match."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"no such config file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    version: Optional[int] = data.pop("format", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported format {version!r}")
    return data


def load_config(path: PathLike, model):
    """Validate a JSON config file against a pydantic model."""
    data = load_config_data(path)
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
