"""Command-line driver: simulate, sweep, check, identity, report.

Exit codes: 0 all checks pass, 1 numerical check failure, 2 configuration
error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import harness
from .dynamics import (
    LimitState,
    RelaxState,
    StepControl,
    energy_dissipation_residual,
    run_limit,
    run_relax,
)
from .harness import ConfigError, ExperimentConfig, parse_config
from .relent import (
    gradflow_relent_residual,
    relax_limit_inequality_residual,
    reltote_residual,
)

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_CONFIG = 2


def _load(path, seed=None) -> ExperimentConfig:
    cfg = parse_config(path)
    if seed is not None:
        cfg.initial.seed = seed
    return cfg


def _say(quiet, *args):
    if not quiet:
        print(*args)


def cmd_simulate(args) -> int:
    cfg = _load(args.config, args.seed)
    out_dir = args.out or cfg.output.directory
    os.makedirs(out_dir, exist_ok=True)
    model = harness.make_model(cfg)
    rho0, m0 = harness.make_initial(cfg, model)
    control = StepControl(dt=cfg.time.dt, cfl_safety=cfg.time.cfl_safety, scheme=cfg.time.scheme)
    if cfg.time.mode == "limit":
        traj = run_limit(model, LimitState(rho=rho0, time=0.0), cfg.time.T, control, n_output=cfg.output.snapshots)
        eps = None
    else:
        state = RelaxState(rho=rho0, m=m0, time=0.0)
        traj = run_relax(model, state, cfg.time.epsilon, cfg.time.T, control, n_output=cfg.output.snapshots)
        eps = cfg.time.epsilon
    harness.write_series_csv(traj, eps, os.path.join(out_dir, "series.csv"))
    harness.write_checkpoint(traj, cfg, out_dir)
    mass = traj.series["mass"]
    drift = float(np.max(np.abs(mass - mass[0])) / abs(mass[0]))
    _say(args.quiet, f"run complete: t={traj.times[-1]:.6g}, mass drift {drift:.3e}, output in {out_dir}")
    if drift > 1e-10:
        _say(args.quiet, "FAIL mass conservation")
        return EXIT_NUMERICAL
    if eps is not None:
        e = traj.series["total_energy"]
        _, resid = energy_dissipation_residual(traj, eps)
        slack = 1e-12 * abs(e[0]) + float(np.max(np.abs(resid))) * float(np.max(np.diff(traj.series["t"])))
        if float(np.max(np.diff(e), initial=-np.inf)) > slack:
            _say(args.quiet, "FAIL energy monotonicity")
            return EXIT_NUMERICAL
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args.config, args.seed)
    out_dir = args.out or cfg.output.directory
    os.makedirs(out_dir, exist_ok=True)
    rep = harness.sweep_eps(cfg, workers=args.workers, keep_trajectories=True)
    with open(os.path.join(out_dir, "sweep.json"), "w") as fh:
        json.dump(rep.to_json_dict(), fh, indent=2, sort_keys=True)
    for eps, traj in zip(rep.eps, rep.trajectories or []):
        harness.write_series_csv(traj, eps, os.path.join(out_dir, f"series_eps_{eps:g}.csv"))
    _say(
        args.quiet,
        f"sweep {rep.model}: slope={rep.slope and round(rep.slope, 3)} r2={rep.r2 and round(rep.r2, 5)} "
        f"{'pass' if rep.passed else 'FAIL'} ({rep.wall_clock:.1f}s)",
    )
    return EXIT_OK if rep.passed else EXIT_NUMERICAL


def cmd_check(args) -> int:
    cfg = _load(args.config, args.seed)
    out_dir = args.out or cfg.output.directory
    os.makedirs(out_dir, exist_ok=True)
    result = harness.check_suite(cfg)
    with open(os.path.join(out_dir, "check.json"), "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
    for c in result["checks"]:
        _say(args.quiet, f"{'pass' if c['pass'] else 'FAIL'}  {c['name']:<28} value={c['value']:.3e} tol={c['tol']:.3e}")
    return EXIT_OK if result["pass"] else EXIT_NUMERICAL


def cmd_identity(args) -> int:
    """Residuals of the relative-energy identities for the configured model."""
    import copy

    from .relent import write_residual_csv, write_residual_summary

    cfg = _load(args.config, args.seed)
    out_dir = args.out or cfg.output.directory
    os.makedirs(out_dir, exist_ok=True)
    model = harness.make_model(cfg)
    eps = cfg.time.epsilon
    n_out = min(cfg.output.snapshots, 20)
    T = min(cfg.time.T, 0.05)
    control = StepControl(cfl_safety=cfg.time.cfl_safety)
    rho0, m0 = harness.make_initial(cfg, model, eps)

    # two nearby relaxation solutions
    cfg_b = copy.deepcopy(cfg)
    cfg_b.initial.amplitude = cfg.initial.amplitude * 1.05
    rho0b, m0b = harness.make_initial(cfg_b, model, eps)
    ta = run_relax(model, RelaxState(rho0, m0), eps, T, control, n_output=n_out)
    tb = run_relax(model, RelaxState(rho0b, m0b), eps, T, control, n_output=n_out)
    t_mid, resid = reltote_residual(ta, tb, model, eps)
    write_residual_csv(os.path.join(out_dir, "identity_two_solution.csv"), t_mid, {"residual": resid})
    _say(args.quiet, f"two-solution identity: max residual {np.max(np.abs(resid)):.3e}")

    # relaxation against the reconstructed limit
    limit_control = harness._limit_sweep_control(model, rho0, cfg.time.cfl_safety)
    lt = run_limit(model, LimitState(rho=rho0, time=0.0), T, limit_control, n_output=n_out)
    ra = run_relax(model, RelaxState(rho0, m0), eps, T, control, n_output=n_out, reference=lt)
    rep = relax_limit_inequality_residual(ra, lt, model, eps)
    scale = max(rep.term_scale(), 1e-300)
    cols = {"lhs": rep.lhs, "rhs": rep.rhs, "imbalance": rep.imbalance}
    cols.update(rep.terms)
    write_residual_csv(os.path.join(out_dir, "identity_inequality.csv"), rep.times, cols)
    _say(args.quiet, f"limit inequality: max imbalance {rep.max_imbalance:.3e} (term scale {scale:.3e})")

    # two nearby limit solutions
    cfg_c = copy.deepcopy(cfg)
    cfg_c.initial.amplitude = cfg.initial.amplitude * 1.05
    rho0c, _ = harness.make_initial(cfg_c, model, eps)
    la = run_limit(model, LimitState(rho=rho0, time=0.0), T, limit_control, n_output=n_out)
    lb = run_limit(model, LimitState(rho=rho0c, time=0.0), T, limit_control, n_output=n_out)
    gt_mid, gresid = gradflow_relent_residual(la, lb, model)
    write_residual_csv(os.path.join(out_dir, "identity_gradflow.csv"), gt_mid, {"residual": gresid})
    _say(args.quiet, f"gradient-flow identity: max residual {np.max(np.abs(gresid)):.3e}")

    summary = write_residual_summary(
        os.path.join(out_dir, "identity_summary.json"),
        {"two_solution": resid, "inequality_imbalance": rep.imbalance, "gradflow": gresid},
        {"inequality_imbalance": 0.05 * scale + 1e-12},
    )
    if not summary["pass"]:
        _say(args.quiet, "FAIL identity residuals")
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_report(args) -> int:
    result = harness.report(args.directory)
    print(result["table"])
    out = os.path.join(args.directory, "report.json")
    with open(out, "w") as fh:
        json.dump({"pass": result["pass"], "entries": result["entries"]}, fh, indent=2, sort_keys=True)
    return EXIT_OK if result["pass"] else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relaxflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("config", help="experiment config file (INI sections)")
        p.add_argument("--out", default=None, help="output directory (default: config [output])")
        p.add_argument("--workers", type=int, default=1, help="parallel sweep workers")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--quiet", action="store_true")

    common(sub.add_parser("simulate", help="run one relaxation or limit solve"))
    common(sub.add_parser("sweep", help="epsilon ladder + rate fit"))
    common(sub.add_parser("check", help="invariant battery on the configured model"))
    common(sub.add_parser("identity", help="relative-energy identity residuals"))
    rp = sub.add_parser("report", help="consolidate JSON summaries in a directory")
    rp.add_argument("directory")
    rp.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": cmd_simulate,
        "sweep": cmd_sweep,
        "check": cmd_check,
        "identity": cmd_identity,
        "report": cmd_report,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
