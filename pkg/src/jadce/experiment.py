"""Experiment configuration: JSON loading, presets, pilot and dataset resolution."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import numpy as np

from .complexlift import ComplexMat
from .container import ContainerError
from .scenario import NOISELESS, Dataset, ScenarioConfig, ScenarioError, gen_dataset, gen_pilot

PRESETS = {
    "desk": {"N": 64, "L": 32, "M": 4, "p": 0.1},
    "paper": {"N": 256, "L": 128, "M": 8, "p": 0.1},
}

# test samples are drawn from indices disjoint from training/validation ones
TEST_OFFSET = 1_000_000
VAL_OFFSET = 500_000

KNOWN_SOLVERS = ("pinv", "ista", "bcd", "lista", "gan")

DEFAULT_BENCH = {
    "scenario": {**PRESETS["desk"], "seed": 0},
    "snr_grid": [0, 10, 20, 30, 40],
    "n_test": 200,
    "solvers": ["pinv", "ista", "bcd"],
    "pilot": "gaussian",
    "ista": {"lambda_grid": [0.01, 0.05, 0.1, 0.2, 0.5], "max_iter": 5000, "tol": 1e-8},
    "bcd": {"lambda_grid": [0.01, 0.05, 0.1, 0.2, 0.5], "max_iter": 5000, "tol": 1e-8},
    "lista": {},
    "gan": {},
    "detection_threshold": None,
}


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps it to exit code 2."""


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def read_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def parse_snr(value):
    if value is None or value == NOISELESS:
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad SNR value {value!r}; use a number or {NOISELESS!r}") from None


def snr_label(snr) -> str:
    return NOISELESS if snr is None else repr(float(snr))


def scenario_from(cfg: dict, preset: str | None = None, seed: int | None = None) -> ScenarioConfig:
    sc = dict(cfg.get("scenario", {}))
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown device-scale preset {preset!r}; choose from {sorted(PRESETS)}")
        sc.update(PRESETS[preset])
    if seed is not None:
        sc["seed"] = seed
    try:
        return ScenarioConfig.from_dict(sc)
    except (ScenarioError, TypeError) as exc:
        raise ConfigError(f"scenario: {exc}") from exc


def resolve_pilot(source, scenario: ScenarioConfig) -> ComplexMat:
    """``"gaussian"`` draws from the scenario seed; anything else is a pilot file."""
    if source in (None, "gaussian"):
        return gen_pilot(scenario.N, scenario.L, scenario.seed)
    from .pilot_design import load_pilot

    if not Path(source).exists():
        raise ConfigError(f"pilot file {source} does not exist")
    try:
        pilot = load_pilot(source).pilot
    except ContainerError as exc:
        raise ConfigError(f"pilot file {source}: {exc}") from exc
    if pilot.shape != (scenario.L, scenario.N):
        raise ConfigError(f"pilot file {source} is {pilot.shape}, scenario needs "
                          f"{(scenario.L, scenario.N)}")
    return pilot


def pilot_digest(pilot: ComplexMat) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(pilot.re, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(pilot.im, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def array_digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def train_val_sets(scenario: ScenarioConfig, pilot: ComplexMat, n_train: int, n_val: int,
                   snr_values=None) -> tuple[Dataset, Dataset]:
    """Training data at offset 0 and validation data at ``VAL_OFFSET``.

    With several ``snr_values`` the samples are split evenly across them
    (training across SNRs); the default trains at the scenario's SNR.
    """
    if not snr_values:
        return (gen_dataset(scenario, n_train, pilot),
                gen_dataset(scenario, n_val, pilot, offset=VAL_OFFSET))
    parts_tr, parts_va = [], []
    k = len(snr_values)
    for j, snr in enumerate(snr_values):
        sc = scenario.with_snr(snr)
        a, b = n_train * j // k, n_train * (j + 1) // k
        c, d = n_val * j // k, n_val * (j + 1) // k
        parts_tr += gen_dataset(sc, b - a, pilot, offset=a).samples
        parts_va += gen_dataset(sc, d - c, pilot, offset=VAL_OFFSET + c).samples
    return Dataset(scenario, pilot, parts_tr), Dataset(scenario, pilot, parts_va)


def test_set(scenario: ScenarioConfig, pilot: ComplexMat, n_test: int) -> Dataset:
    return gen_dataset(scenario, n_test, pilot, offset=TEST_OFFSET)


def require_int(cfg: dict, key: str, default: int, minimum: int = 0) -> int:
    v = cfg.get(key, default)
    if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
        raise ConfigError(f"{key} must be an integer >= {minimum}, got {v!r}")
    return v
