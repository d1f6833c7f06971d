"""Paired GAN runs with and without the nullspace projection.

    python scripts/projection_ablation.py --seeds 0 1 --out ablation.csv
"""
import argparse
import csv
import logging
import time

from jadce import gan
from jadce.complexlift import Projector
from jadce.experiment import PRESETS, test_set, train_val_sets
from jadce.metrics import nmse_db
from jadce.scenario import ScenarioConfig, gen_pilot

DEFAULTS = dict(n_blocks=2, widths=(8, 16, 32), disc_widths=(8, 16, 32), n_critic=1,
                max_epochs=15, patience=4, head_init_scale=0.0)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1])
    ap.add_argument("--snr", type=float, help="training and test SNR in dB (default noiseless)")
    ap.add_argument("--n-train", type=int, default=2000)
    ap.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    ap.add_argument("--out", default="ablation.csv")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    rows = []
    for seed in args.seeds:
        sc = ScenarioConfig(**PRESETS[args.preset], snr_db=args.snr, seed=seed)
        pilot = gen_pilot(sc.N, sc.L, seed)
        tr, va = train_val_sets(sc, pilot, args.n_train, 250)
        Y, X = test_set(sc, pilot, 250).lifted
        proj = Projector.from_pilot(pilot)
        rows.append({"seed": seed, "variant": "pinv", "nmse_db": nmse_db(proj.estimate(Y), X),
                     "seconds": 0.0})
        for use in (True, False):
            t0 = time.perf_counter()
            res = gan.train_gan(tr.lifted, va.lifted, proj,
                                gan.GANConfig(**DEFAULTS, use_projection=use), seed=seed)
            rows.append({"seed": seed, "variant": "with_P" if use else "without_P",
                         "nmse_db": nmse_db(gan.generate(res.generator, Y, proj, use), X),
                         "seconds": time.perf_counter() - t0})
            print(rows[-1], flush=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
