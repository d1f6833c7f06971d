"""Full pipeline: optional pilot training, LISTA and GAN training, then the SNR bench.

    python scripts/run_bench.py --config configs/desk.json --out runs/desk
    python scripts/run_bench.py --config configs/desk.json --out runs/desk-opt --optimize-pilot

Results land in ``<out>/bench/`` (results.csv, nmse_vs_snr.csv, manifest.json).
"""
import argparse
import json
import sys
from pathlib import Path

from jadce.cli import EXIT_OK, main as jadce


def run(argv):
    print("jadce", " ".join(argv), flush=True)
    code = jadce(argv)
    if code != EXIT_OK:
        sys.exit(code)


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--optimize-pilot", action="store_true")
    ap.add_argument("--skip-gan", action="store_true", help="leave the GAN out (slowest part)")
    return ap.parse_args()


def main():
    args = parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    common = ["--config", args.config] + (["--seed", str(args.seed)] if args.seed is not None else [])
    pilot = "gaussian"
    if args.optimize_pilot:
        pilot = str(out / "pilot.bin")
        run(["train-pilot", *common, "--out", pilot])
    learned = {"lista": str(out / "lista.bin")}
    run(["train-lista", *common, "--pilot", pilot, "--out", learned["lista"]])
    if not args.skip_gan:
        learned["gan"] = str(out / "gan.bin")
        run(["train-gan", *common, "--pilot", pilot, "--out", learned["gan"],
             "--log", str(out / "gan_log.csv")])

    cfg = json.loads(Path(args.config).read_text())
    for name, path in learned.items():
        cfg[name] = {"model": path}
    cfg["pilot"] = pilot
    cfg["solvers"] = ["pinv", "ista", "bcd", *learned]
    bench_cfg = out / "bench_config.json"
    bench_cfg.write_text(json.dumps(cfg, indent=2))
    seed = ["--seed", str(args.seed)] if args.seed is not None else []
    run(["bench", "--config", str(bench_cfg), *seed, "--out", str(out / "bench")])
    print((out / "bench" / "nmse_vs_snr.csv").read_text())


if __name__ == "__main__":
    main()
