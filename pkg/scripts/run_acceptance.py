#!/usr/bin/env python3
"""Run the three convergence-rate sweeps and persist their reports.

Reproduces the headline experiment: for each relaxation model, integrate the
gradient-flow limit once, run the relaxation system down the epsilon ladder
from well-prepared data, and fit the log-log slope of sup_t of the relative
energy (the stability estimates predict 4).  Writes one sweep JSON plus per-epsilon
series CSVs per model under --out.
"""

import argparse
import json
import os
import sys

from relaxflow.harness import ExperimentConfig, sweep_eps, write_series_csv


def criterion_config(variant: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.grid.dim = 1
    cfg.grid.n = 256
    cfg.model.variant = variant
    cfg.model.k = 1.0
    cfg.model.gamma = 2.0
    cfg.model.chemo = 0.1
    cfg.model.screening = 1.0
    cfg.model.capillarity = 0.01
    cfg.time.T = 0.25
    cfg.initial.base = 1.0
    cfg.initial.amplitude = 0.2
    cfg.initial.momentum = "equilibrium"
    cfg.output.snapshots = 50
    cfg.sweep.eps = (0.1, 0.05, 0.025, 0.0125)
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="acceptance_out")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument(
        "--models",
        nargs="+",
        default=["euler_poisson", "euler_korteweg", "euler"],
        choices=["euler", "euler_poisson", "euler_korteweg"],
    )
    args = parser.parse_args(argv)
    os.makedirs(args.out, exist_ok=True)

    all_pass = True
    for variant in args.models:
        cfg = criterion_config(variant)
        rep = sweep_eps(cfg, workers=args.workers, keep_trajectories=True)
        all_pass &= rep.passed
        with open(os.path.join(args.out, f"sweep_{variant}.json"), "w") as fh:
            json.dump(rep.to_json_dict(), fh, indent=2, sort_keys=True)
        for eps, traj in zip(rep.eps, rep.trajectories):
            write_series_csv(traj, eps, os.path.join(args.out, f"series_{variant}_eps_{eps:g}.csv"))
        status = "pass" if rep.passed else "FAIL"
        print(
            f"{variant:<16} slope={rep.slope:.4f} r2={rep.r2:.6f} "
            f"sup={['%.3e' % v for v in rep.sup_phi]} {status} ({rep.wall_clock:.1f}s)"
        )
    return 0 if all_pass else 1


if __name__ == "__main__":
    sys.exit(main())
