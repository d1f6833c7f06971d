"""Benchmark runner: every selected solver over an SNR grid on shared datasets."""
from __future__ import annotations

import csv
import json
import logging
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import classic_solvers as cs
from . import gan, metrics, unrolled
from .complexlift import Projector, lift_operator
from .container import ContainerError, load_bundle, save_bundle
from .experiment import (
    KNOWN_SOLVERS,
    ConfigError,
    array_digest,
    parse_snr,
    pilot_digest,
    resolve_pilot,
    snr_label,
    test_set,
)
from .scenario import ScenarioConfig

log = logging.getLogger(__name__)

CSV_FIELDS = ["solver", "snr_db", "nmse_db", "nmse_median_db", "pmd", "pfa", "iterations",
              "lambda_frac"]


@dataclass
class SolverOutput:
    X: np.ndarray
    iterations: int
    lambda_frac: float | None = None


# --------------------------------------------------------------------------
# model files
# --------------------------------------------------------------------------

def save_lista(path, params, pilot, T: int, lam: float, scenario: ScenarioConfig) -> None:
    save_bundle(path, params.with_frozen(()), "lista",
                {"pilot_digest": pilot_digest(pilot), "layers": T, "lambda": lam,
                 "scenario": scenario.to_dict()})


def save_gan(path, result: gan.GANResult, pilot, scenario: ScenarioConfig) -> None:
    bundle = result.generator.with_frozen(()).merge(result.discriminator.with_frozen(()))
    save_bundle(path, bundle, "gan", {"pilot_digest": pilot_digest(pilot),
                                      "gan_config": result.config.to_dict(),
                                      "val_nmse_db": result.val_nmse_db,
                                      "scenario": scenario.to_dict()})


def load_model(path, kind: str, pilot=None):
    if not Path(path).exists():
        raise ConfigError(f"{kind} model file {path} does not exist")
    try:
        bundle, meta = load_bundle(path, kind)
    except ContainerError as exc:
        raise ConfigError(f"{kind} model file {path}: {exc}") from exc
    if pilot is not None and meta.get("pilot_digest") != pilot_digest(pilot):
        raise ConfigError(f"{kind} model {path} was trained for a different pilot")
    return bundle, meta


def _model_path(section: dict, snr, solver: str):
    models = section.get("models")
    if models:
        key = snr_label(snr)
        for k, v in models.items():
            if snr_label(parse_snr(k)) == key:
                return v
        raise ConfigError(f"{solver}: no model for SNR {key} in 'models'")
    if "model" in section:
        return section["model"]
    raise ConfigError(f"{solver}: config needs '{solver}.model' or '{solver}.models'")


# --------------------------------------------------------------------------
# solvers
# --------------------------------------------------------------------------

def _best_lambda(fn, S, Y, X_true, grid):
    lam_max = cs.lambda_max(S, Y)
    best = None
    for frac in grid:
        rep = fn(cs.GroupLassoProblem(S, Y, frac * lam_max))
        db = metrics.nmse_db(rep.X, X_true)
        if best is None or db < best[0]:
            best = (db, SolverOutput(rep.X, rep.iterations, float(frac)))
    return best[1]


def run_solver(name: str, cfg: dict, S, proj: Projector, Y, X_true, snr, pilot) -> SolverOutput:
    section = cfg.get(name, {}) or {}
    if name == "pinv":
        return SolverOutput(proj.estimate(Y), 0)
    if name in ("ista", "bcd"):
        grid = section.get("lambda_grid", cs.LAMBDA_GRID)
        max_iter = section.get("max_iter", cs.DEFAULT_MAX_ITER)
        tol = section.get("tol", cs.DEFAULT_TOL)
        solve = cs.ista_solve if name == "ista" else cs.bcd_solve
        return _best_lambda(lambda pr: solve(pr, max_iter=max_iter, tol=tol, trace=False),
                            S, Y, X_true, grid)
    if name == "lista":
        params, meta = load_model(_model_path(section, snr, name), "lista", pilot)
        return SolverOutput(unrolled.lista_predict(params, Y), unrolled.n_layers(params))
    if name == "gan":
        params, meta = load_model(_model_path(section, snr, name), "gan", pilot)
        gcfg = gan.GANConfig.from_dict(meta["gan_config"])
        gen = params.subset(lambda k: k.startswith("g"))
        return SolverOutput(gan.generate(gen, Y, proj, gcfg.use_projection), gan.n_blocks(gen))
    raise ConfigError(f"unknown solver {name!r}; choose from {KNOWN_SOLVERS}")


# --------------------------------------------------------------------------
# bench
# --------------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return "NA"
    if isinstance(x, float):
        return repr(round(float(x), 10))
    return str(x)


def run_bench(cfg: dict, scenario: ScenarioConfig, out_dir, timing: bool = False) -> list[dict]:
    """Run the grid and write ``results.csv``, ``nmse_vs_snr.csv``, ``manifest.json``."""
    solvers = list(cfg["solvers"])
    for s in solvers:
        if s not in KNOWN_SOLVERS:
            raise ConfigError(f"unknown solver {s!r}; choose from {KNOWN_SOLVERS}")
    grid = [parse_snr(s) for s in cfg["snr_grid"]]
    if not grid:
        raise ConfigError("snr_grid must be nonempty")
    n_test = cfg.get("n_test", 200)
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RuntimeError(f"cannot create output directory {out_dir}: {exc}") from exc

    pilot = resolve_pilot(cfg.get("pilot", "gaussian"), scenario)
    S = lift_operator(pilot)
    proj = Projector(S)
    tau = cfg.get("detection_threshold")
    tau = metrics.default_threshold(scenario.M) if tau is None else float(tau)

    rows, timings, digests = [], {}, {}
    for snr in grid:
        ds = test_set(scenario.with_snr(snr), pilot, n_test)
        Y, X = ds.lifted
        truth = ds.activity
        digests[snr_label(snr)] = array_digest(Y, X)
        for name in solvers:
            t0 = time.perf_counter()
            out = run_solver(name, cfg, S, proj, Y, X, snr, pilot)
            elapsed = 1000.0 * (time.perf_counter() - t0)
            per = metrics.nmse_db_per_sample(out.X, X)
            pmd, pfa = metrics.pmd_pfa(metrics.detect_activity(out.X, tau), truth)
            row = {"solver": name, "snr_db": snr_label(snr), "nmse_db": metrics.nmse_db(out.X, X),
                   "nmse_median_db": float(np.nanmedian(per)) if np.any(np.isfinite(per)) else None,
                   "pmd": pmd, "pfa": pfa, "iterations": out.iterations,
                   "lambda_frac": out.lambda_frac}
            if timing:
                row["runtime_ms"] = elapsed
            timings[f"{name}@{snr_label(snr)}"] = elapsed
            rows.append(row)
            log.info("%s @ %s dB: NMSE %.2f dB", name, snr_label(snr), row["nmse_db"])

    fields = CSV_FIELDS + (["runtime_ms"] if timing else [])
    try:
        with open(out_dir / "results.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(fields)
            for r in rows:
                w.writerow([_fmt(r[f]) for f in fields])
        with open(out_dir / "nmse_vs_snr.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["snr_db"] + solvers)
            for snr in grid:
                lab = snr_label(snr)
                w.writerow([lab] + [_fmt(r["nmse_db"]) for s in solvers for r in rows
                                    if r["solver"] == s and r["snr_db"] == lab])
        manifest = {
            "config": cfg, "scenario": scenario.to_dict(), "seed": scenario.seed,
            "pilot_digest": pilot_digest(pilot), "dataset_digests": digests,
            "detection_threshold": tau, "code_version": __version__,
            "python": platform.python_version(), "numpy": np.__version__,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "runtime_ms": timings,
        }
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))
    except OSError as exc:
        raise RuntimeError(f"cannot write results to {out_dir}: {exc}") from exc
    return rows
