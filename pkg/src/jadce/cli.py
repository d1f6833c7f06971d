"""``jadce`` command line: gen-data, train-pilot, train-lista, train-gan, solve, bench.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import bench, gan, pilot_design, unrolled
from .classic_solvers import lambda_max
from .complexlift import Projector, lift_operator
from .container import ContainerError, save_arrays
from .experiment import (
    DEFAULT_BENCH,
    ConfigError,
    deep_merge,
    parse_snr,
    pilot_digest,
    read_json,
    require_int,
    resolve_pilot,
    scenario_from,
    train_val_sets,
)
from .metrics import nmse_db
from .scenario import gen_dataset, load_dataset, save_dataset

log = logging.getLogger("jadce")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _load_cfg(args, defaults=None) -> dict:
    cfg = read_json(args.config) if args.config else {}
    return deep_merge(defaults or {}, cfg)


def _scenario(args, cfg):
    sc = scenario_from(cfg, args.device_scale, args.seed)
    if getattr(args, "snr", None):
        if len(args.snr) != 1:
            raise ConfigError("this command takes a single --snr value")
        sc = sc.with_snr(args.snr[0])
    return sc


def _pilot(args, cfg, scenario):
    return resolve_pilot(args.pilot or cfg.get("pilot", "gaussian"), scenario)


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    sc = _scenario(args, cfg)
    pilot = _pilot(args, cfg, sc)
    n = require_int(cfg, "n_samples", 1000)
    ds = gen_dataset(sc, n, pilot, offset=require_int(cfg, "offset", 0))
    save_dataset(ds, args.out)
    log.info("wrote %d samples to %s", n, args.out)
    return EXIT_OK


def cmd_train_pilot(args) -> int:
    cfg = _load_cfg(args)
    sc = _scenario(args, cfg)
    init = _pilot(args, cfg, sc)
    pcfg = cfg.get("pilot_training", {})
    n_train = require_int(pcfg, "n_train", 2000, 1)
    n_val = require_int(pcfg, "n_val", 1000, 1)
    Ztr = pilot_design.noise_batch(sc.L, sc.M, n_train, [sc.seed, 10])
    Zva = pilot_design.noise_batch(sc.L, sc.M, n_val, [sc.seed, 11])
    rho = None if pcfg.get("unconstrained", False) else pcfg.get("rho", "default")
    res, hist = pilot_design.optimize_pilot(
        init, Ztr, Zva, lr=pcfg.get("lr", 1e-2), steps=require_int(pcfg, "steps", 300),
        rho=rho, seed=sc.seed, return_history=True)
    pilot_design.save_pilot(args.out, res, {"scenario": sc.to_dict(),
                                            "val_loss_init": hist.val_loss[0],
                                            "val_loss_best": min(hist.val_loss)})
    log.info("validation E||S+Z||: %.4f -> %.4f", hist.val_loss[0], min(hist.val_loss))
    if hist.aborted:
        log.warning("pilot optimization stopped early: %s", hist.aborted)
    return EXIT_OK


def _train_snrs(cfg):
    snrs = cfg.get("train_snrs")
    return [parse_snr(s) for s in snrs] if snrs else None


def cmd_train_lista(args) -> int:
    cfg = _load_cfg(args)
    sc = _scenario(args, cfg)
    pilot = _pilot(args, cfg, sc)
    lcfg = cfg.get("lista", {})
    T = args.layers or require_int(lcfg, "layers", 6, 1)
    tr, va = train_val_sets(sc, pilot, require_int(lcfg, "n_train", 2000, 1),
                            require_int(lcfg, "n_val", 500, 1), _train_snrs(lcfg))
    S = lift_operator(pilot)
    lam = lcfg.get("lambda_frac", 0.1) * float(np.median(lambda_max(S, tr.lifted[0])))
    params = unrolled.train_lista(tr.lifted, va.lifted, S, T, require_int(lcfg, "epochs", 3),
                                  lr=lcfg.get("lr", 5e-4), seed=sc.seed, lam=lam)
    bench.save_lista(args.out, params, pilot, T, lam, sc)
    log.info("LISTA(T=%d) validation NMSE %.2f dB", T,
             nmse_db(unrolled.lista_predict(params, va.lifted[0]), va.lifted[1]))
    return EXIT_OK


def cmd_train_gan(args) -> int:
    cfg = _load_cfg(args)
    sc = _scenario(args, cfg)
    pilot = _pilot(args, cfg, sc)
    gsec = dict(cfg.get("gan", {}))
    n_train = require_int(gsec, "n_train", 2000, 1)
    n_val = require_int(gsec, "n_val", 250, 1)
    train_snrs = _train_snrs(gsec)
    for k in ("n_train", "n_val", "train_snrs", "model", "models"):
        gsec.pop(k, None)
    if args.blocks:
        gsec["n_blocks"] = args.blocks
    try:
        gcfg = gan.GANConfig(**gsec)
    except TypeError as exc:
        raise ConfigError(f"gan: {exc}") from exc
    tr, va = train_val_sets(sc, pilot, n_train, n_val, train_snrs)
    proj = Projector.from_pilot(pilot)
    result = gan.train_gan(tr.lifted, va.lifted, proj, gcfg, seed=sc.seed)
    bench.save_gan(args.out, result, pilot, sc)
    if args.log:
        result.log.write_csv(args.log)
    log.info("GAN(K=%d) validation NMSE %.2f dB", gcfg.n_blocks, result.val_nmse_db)
    return EXIT_OK


def cmd_solve(args) -> int:
    try:
        ds = load_dataset(args.dataset)
    except ContainerError as exc:
        raise ConfigError(f"dataset {args.dataset}: {exc}") from exc
    if len(args.solver) != 1:
        raise ConfigError("solve takes exactly one --solver")
    name = args.solver[0]
    cfg = _load_cfg(args, DEFAULT_BENCH)
    if args.model:
        cfg.setdefault(name, {})["model"] = args.model
    S = lift_operator(ds.pilot)
    Y, X = ds.lifted
    out = bench.run_solver(name, cfg, S, Projector(S), Y, X, ds.config.snr_db, ds.pilot)
    save_arrays(args.out, {"X_hat": out.X}, "estimates",
                {"solver": name, "iterations": out.iterations, "lambda_frac": out.lambda_frac,
                 "pilot_digest": pilot_digest(ds.pilot), "scenario": ds.config.to_dict()})
    if len(ds) and np.any(X):
        print(f"{name}: NMSE {nmse_db(out.X, X):.3f} dB over {len(ds)} samples")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_cfg(args, DEFAULT_BENCH)
    if args.solver:
        cfg["solvers"] = [s for item in args.solver for s in item.split(",") if s]
    if args.snr:
        cfg["snr_grid"] = args.snr
    if args.pilot:
        cfg["pilot"] = args.pilot
    sc = scenario_from(cfg, args.device_scale, args.seed)
    cfg["scenario"] = sc.to_dict()
    rows = bench.run_bench(cfg, sc, args.out, timing=args.timing)
    for r in rows:
        print(f"{r['solver']:>6} snr={r['snr_db']:>9} nmse={r['nmse_db']:8.2f} dB")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jadce", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help="output path"):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--device-scale", choices=["desk", "paper"],
                       help="preset for N, L, M, p")
        p.add_argument("--pilot", help="'gaussian' or a pilot container file")
        return p

    snr_arg = dict(action="append", type=parse_snr, metavar="DB",
                   help="SNR in dB or 'noiseless' (repeatable for bench)")
    p = common(sub.add_parser("gen-data", help="generate a dataset file"))
    p.add_argument("--snr", **snr_arg)
    p.set_defaults(func=cmd_gen_data)
    p = common(sub.add_parser("train-pilot", help="optimize the pilot matrix"))
    p.set_defaults(func=cmd_train_pilot)
    p = common(sub.add_parser("train-lista", help="train group LISTA"))
    p.add_argument("--snr", **snr_arg)
    p.add_argument("--layers", type=int)
    p.set_defaults(func=cmd_train_lista)
    p = common(sub.add_parser("train-gan", help="train the U-net GAN"))
    p.add_argument("--snr", **snr_arg)
    p.add_argument("--blocks", type=int)
    p.add_argument("--log", help="training log CSV path")
    p.set_defaults(func=cmd_train_gan)
    p = common(sub.add_parser("solve", help="run one solver on a dataset file"),
               "estimates container path")
    p.add_argument("--dataset", required=True)
    p.add_argument("--solver", action="append", required=True)
    p.add_argument("--model", help="model file for lista/gan")
    p.set_defaults(func=cmd_solve)
    p = common(sub.add_parser("bench", help="benchmark solvers over an SNR grid"),
               "output directory")
    p.add_argument("--solver", action="append", help="solver name(s), comma separated")
    p.add_argument("--snr", **snr_arg)
    p.add_argument("--timing", action="store_true",
                   help="add a runtime_ms column (makes the CSV non-reproducible)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContainerError, RuntimeError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
