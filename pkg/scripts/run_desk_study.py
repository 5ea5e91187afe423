"""Run a Monte Carlo config and print a compact bias table.

    python scripts/run_desk_study.py configs/desk.toml --threads 4
"""

import argparse
import logging
from dataclasses import replace

import numpy as np

from noisydiff.harness import full_scale, load_config, run_experiment, write_report


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--replications", type=int)
    ap.add_argument("--full-scale", action="store_true")
    ap.add_argument("--output", "-o")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    cfg = load_config(args.config)
    if args.full_scale:
        cfg = full_scale(cfg)
    if args.replications:
        cfg = replace(cfg, replications=args.replications)
    rep = run_experiment(cfg, threads=args.threads)
    meta = rep.metadata
    print(f"n={meta['n']} h={meta['h']:.4g} p={meta['p']} k={meta['k']} delta={meta['delta']:.4g} "
          f"R={meta['replications']} failed={meta['failed_replications']} ({meta['wall_time_s']:.0f} s)")
    print(f"{'scenario':>10} {'method':>6} {'param':>9} {'true':>9} {'mean':>11} {'sd':>10} {'z':>7}")
    for r in rep.rows:
        se = r["sd"] / np.sqrt(max(r["n_ok"], 1))
        z = (r["mean"] - r["true_value"]) / se if se > 0 else float("nan")
        print(f"{r['scenario']:>10} {r['method']:>6} {r['parameter']:>9} {r['true_value']:>9.3g} "
              f"{r['mean']:>11.6f} {r['sd']:>10.6f} {z:>7.2f}")
    for r in rep.rejection:
        print(f"{r['scenario']:>10} P(Z >= z_{r['level']:g}) = {r['rate']:.3f}")
    out = args.output or cfg.output
    if out:
        write_report(rep, out)


if __name__ == "__main__":
    main()
