"""Experiment configuration, initial data, sweeps, and report persistence.

Configs are plain-text INI files ([section] headers, key = value lines),
chosen for hand-editability.  A sweep integrates the gradient-flow limit
once, then runs the relaxation system for every epsilon in the ladder from
well-prepared data, records sup_t of the relative energy, and fits the
log-log slope against epsilon.
"""

from __future__ import annotations

import configparser
import json
import math
import os
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import elliptic
from .dynamics import (
    LimitState,
    RelaxState,
    StepControl,
    Trajectory,
    cfl_dt,
    energy_dissipation_residual,
    equilibrium_momentum,
    run_limit,
    run_relax,
    stress_identity_residual,
)
from .energetics import (
    EnergyModel,
    EulerKortewegModel,
    EulerModel,
    EulerPoissonModel,
    GammaLaw,
    gateaux_check,
    h_rel,
)
from .fields import (
    ScalarField,
    TorusGrid,
    VectorField,
    dealias,
    dump_field_csv,
    integral,
    l2_norm,
    mean,
    workspace_for,
)

__all__ = [
    "GridConfig",
    "ModelConfig",
    "TimeConfig",
    "InitialConfig",
    "SweepConfig",
    "OutputConfig",
    "ExperimentConfig",
    "ConfigError",
    "parse_config",
    "make_grid",
    "make_model",
    "make_initial",
    "slope_fit",
    "sweep_eps",
    "SweepReport",
    "check_suite",
    "report",
    "write_series_csv",
    "write_checkpoint",
]


class ConfigError(ValueError):
    """Raised for malformed or out-of-range configuration input."""


@dataclass
class GridConfig:
    dim: int = 1
    n: int = 256
    length: float = 2.0 * math.pi


@dataclass
class ModelConfig:
    variant: str = "euler"
    k: float = 1.0
    gamma: float = 2.0
    chemo: float = 0.1
    screening: float = 0.0
    capillarity: float = 0.01
    confinement_amplitude: float = 0.0


@dataclass
class TimeConfig:
    T: float = 0.25
    epsilon: float = 0.1
    dt: Optional[float] = None
    cfl_safety: float = 0.4
    scheme: str = "auto"
    mode: str = "relax"  # relax | limit


@dataclass
class InitialConfig:
    profile: str = "cosine"
    amplitude: float = 0.2
    base: float = 1.0
    momentum: str = "equilibrium"  # zero | equilibrium | perturbed
    seed: int = 0
    perturbation: float = 0.0


@dataclass
class SweepConfig:
    eps: tuple = (0.1, 0.05, 0.025, 0.0125)
    slope_min: float = 3.5
    slope_max: float = 4.5
    r2_min: float = 0.98


@dataclass
class OutputConfig:
    directory: str = "out"
    snapshots: int = 50


@dataclass
class ExperimentConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self) -> "ExperimentConfig":
        if self.model.variant not in ("euler", "euler_poisson", "euler_korteweg"):
            raise ConfigError(f"unknown model variant {self.model.variant!r}")
        if not self.initial.amplitude < self.initial.base:
            raise ConfigError("initial amplitude must stay below the base density (positivity)")
        if self.initial.momentum not in ("zero", "equilibrium", "perturbed"):
            raise ConfigError(f"unknown momentum preparation {self.initial.momentum!r}")
        eps = tuple(self.sweep.eps)
        if any(e <= 0 for e in eps):
            raise ConfigError("sweep epsilons must be positive")
        if list(eps) != sorted(eps, reverse=True):
            raise ConfigError("sweep epsilon ladder must be strictly decreasing")
        if self.time.mode not in ("relax", "limit"):
            raise ConfigError(f"unknown run mode {self.time.mode!r}")
        return self


def _coerce(value: str, target):
    if target is float:
        return float(value)
    if target is int:
        return int(value)
    return value


def parse_config(path) -> ExperimentConfig:
    """Read the INI-style experiment file.  Unknown keys are rejected."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (T vs t)
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    cfg = ExperimentConfig()
    sections = {
        "grid": cfg.grid,
        "model": cfg.model,
        "time": cfg.time,
        "initial": cfg.initial,
        "sweep": cfg.sweep,
        "output": cfg.output,
    }
    try:
        for name, target in sections.items():
            if not cp.has_section(name):
                continue
            for key, raw in cp.items(name):
                if not hasattr(target, key):
                    raise ConfigError(f"unknown key [{name}] {key}")
                current = getattr(target, key)
                if name == "sweep" and key == "eps":
                    value = tuple(float(tok) for tok in raw.replace(",", " ").split())
                elif name == "time" and key == "dt":
                    value = None if raw.strip().lower() in ("auto", "none") else float(raw)
                elif isinstance(current, bool):
                    value = raw.strip().lower() in ("1", "true", "yes", "on")
                elif isinstance(current, int):
                    value = int(raw)
                elif isinstance(current, float):
                    value = float(raw)
                elif current is None:
                    value = float(raw)
                else:
                    value = raw.strip()
                setattr(target, key, value)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def make_grid(cfg: ExperimentConfig) -> TorusGrid:
    return TorusGrid(dim=cfg.grid.dim, n=cfg.grid.n, length=cfg.grid.length)


def _confinement_field(grid: TorusGrid, amplitude: float) -> ScalarField:
    coords = grid.meshgrid()
    scale = 2.0 * math.pi / grid.length
    profile = np.cos(scale * coords[0])
    for axis in range(1, grid.dim):
        profile = profile * np.cos(scale * coords[axis])
    return ScalarField(grid, amplitude * profile)


def make_model(cfg: ExperimentConfig, grid: Optional[TorusGrid] = None) -> EnergyModel:
    law = GammaLaw(k=cfg.model.k, gamma=cfg.model.gamma)
    variant = cfg.model.variant
    if variant == "euler":
        conf = None
        if cfg.model.confinement_amplitude != 0.0:
            conf = _confinement_field(grid or make_grid(cfg), cfg.model.confinement_amplitude)
        return EulerModel(law=law, confinement=conf)
    if variant == "euler_poisson":
        return EulerPoissonModel(law=law, chemo=cfg.model.chemo, screening=cfg.model.screening)
    if variant == "euler_korteweg":
        return EulerKortewegModel(law=law, capillarity=cfg.model.capillarity)
    raise ConfigError(f"unknown model variant {variant!r}")


def _band_limited_noise(grid: TorusGrid, seed: int, max_mode: int = 4) -> np.ndarray:
    """Deterministic smooth noise with unit max-abs, modes up to max_mode."""
    rng = np.random.default_rng(seed)
    coords = grid.meshgrid()
    scale = 2.0 * math.pi / grid.length
    out = np.zeros(grid.shape)
    for _ in range(6):
        ks = rng.integers(1, max_mode + 1, size=grid.dim)
        phases = rng.uniform(0, 2 * math.pi, size=grid.dim)
        amp = rng.uniform(0.3, 1.0)
        wave = amp * np.ones(grid.shape)
        for ax in range(grid.dim):
            wave = wave * np.cos(ks[ax] * scale * coords[ax] + phases[ax])
        out += wave
    return out / np.max(np.abs(out))


def make_initial(cfg: ExperimentConfig, model: Optional[EnergyModel] = None, epsilon: Optional[float] = None):
    """Initial density and momentum per the configured preparation.

    Returns (rho0, m0); m0 is None in limit mode.  The cosine profile is
    base + amplitude*cos(2 pi x / L) (times cos(2 pi y / L) in 2-d).
    """
    grid = make_grid(cfg)
    model = model if model is not None else make_model(cfg, grid)
    eps = cfg.time.epsilon if epsilon is None else epsilon
    ini = cfg.initial
    if ini.profile != "cosine":
        raise ConfigError(f"unknown initial profile {ini.profile!r}")
    if not ini.amplitude < ini.base:
        raise ConfigError("initial amplitude must stay below the base density")
    coords = grid.meshgrid()
    scale = 2.0 * math.pi / grid.length
    profile = np.cos(scale * coords[0])
    for axis in range(1, grid.dim):
        profile = profile * np.cos(scale * coords[axis])
    rho0 = ScalarField(grid, ini.base + ini.amplitude * profile)
    if cfg.time.mode == "limit":
        return rho0, None
    if ini.momentum == "zero":
        m0 = VectorField.zeros(grid)
    elif ini.momentum == "equilibrium":
        m0 = equilibrium_momentum(model, rho0, eps)
    elif ini.momentum == "perturbed":
        m0 = equilibrium_momentum(model, rho0, eps)
        noise = _band_limited_noise(grid, ini.seed)
        m0 = VectorField.from_arrays(
            grid, [c.values + ini.perturbation * rho0.values * noise for c in m0.components]
        )
    else:
        raise ConfigError(f"unknown momentum preparation {ini.momentum!r}")
    return rho0, m0


# -- slope fitting ---------------------------------------------------------------


def slope_fit(pairs):
    """Least-squares fit of log(value) against log(eps); returns (slope, intercept, r2)."""
    pairs = [(float(e), float(v)) for e, v in pairs]
    if len(pairs) < 3:
        raise ValueError("slope fit needs at least 3 points")
    if any(v <= 0 or e <= 0 for e, v in pairs):
        raise ValueError("slope fit needs positive epsilons and values")
    x = np.log([e for e, _ in pairs])
    y = np.log([v for _, v in pairs])
    slope, intercept = np.polyfit(x, y, 1)
    fit = slope * x + intercept
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), float(r2)


# -- sweeps -----------------------------------------------------------------------


@dataclass
class SweepReport:
    model: str
    eps: list
    sup_phi: list
    slope: Optional[float]
    intercept: Optional[float]
    r2: Optional[float]
    passed: bool
    residuals: list  # per-eps dict: max energy residual, mass drift
    wall_clock: float
    trajectories: Optional[list] = None
    limit_trajectory: Optional[Trajectory] = None

    def to_json_dict(self) -> dict:
        return {
            "model": self.model,
            "eps": list(self.eps),
            "sup_phi": list(self.sup_phi),
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "pass": self.passed,
            "residuals": self.residuals,
            "wall_clock": self.wall_clock,
        }


def _limit_sweep_control(model: EnergyModel, rho0: ScalarField, safety: float) -> StepControl:
    """Limit-run control for sweeps.

    The semi-implicit Cahn-Hilliard stepper is first order, and the limit
    solution enters the relative energy quadratically, so its step runs a
    further 4x below the explicit k^2 bound to keep that pollution beneath
    the eps^4 signal of the smallest ladder point.
    """
    if isinstance(model, EulerKortewegModel):
        kmax = (2.0 * math.pi / rho0.grid.length) * (rho0.grid.n / 3.0)
        dt = safety * 2.8 / (float(model.law.dp(float(np.max(rho0.values)))) * kmax**2) / 4.0
        return StepControl(dt=dt, cfl_safety=safety, scheme="semi_implicit_spectral")
    return StepControl(dt=None, cfl_safety=safety, scheme="explicit_rk4")


def _sweep_point(model, limit_traj, rho0, eps, T, safety, n_output):
    m0 = equilibrium_momentum(model, rho0, eps)
    state = RelaxState(rho=rho0, m=m0, time=0.0)
    control = StepControl(dt=None, cfl_safety=safety)
    traj = run_relax(model, state, eps, T, control, n_output=n_output, reference=limit_traj)
    key = "psi" if isinstance(model, EulerKortewegModel) else "phi"
    sup = float(np.max(traj.series[key]))
    mass = traj.series["mass"]
    drift = float(np.max(np.abs(mass - mass[0])) / abs(mass[0]))
    _, resid = energy_dissipation_residual(traj, eps)
    summary = {
        "eps": eps,
        "sup": sup,
        "mass_drift": drift,
        "max_energy_residual": float(np.max(np.abs(resid))),
        "energy_increase": float(np.max(np.diff(traj.series["total_energy"]), initial=-np.inf)),
    }
    return traj, summary


def sweep_eps(cfg: ExperimentConfig, workers: int = 1, keep_trajectories: bool = False) -> SweepReport:
    """Run the epsilon ladder against a shared limit solution and fit the rate.

    The limit trajectory is integrated once; every relaxation run starts from
    well-prepared data (per the configured momentum preparation) and records
    sup_t of the relative energy (psi for the capillary model, phi otherwise).
    """
    cfg.validate()
    t0 = _time.perf_counter()
    grid = make_grid(cfg)
    model = make_model(cfg, grid)
    eps_list = list(cfg.sweep.eps)
    T = cfg.time.T
    n_output = cfg.output.snapshots
    safety = cfg.time.cfl_safety

    rho0, _ = make_initial(cfg, model, eps_list[0])
    limit_control = _limit_sweep_control(model, rho0, safety)
    limit_traj = run_limit(model, LimitState(rho=rho0, time=0.0), T, limit_control, n_output=n_output)

    points = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_sweep_point, model, limit_traj, rho0, eps, T, safety, n_output)
                for eps in eps_list
            ]
            points = [f.result() for f in futures]
    else:
        points = [_sweep_point(model, limit_traj, rho0, eps, T, safety, n_output) for eps in eps_list]

    sups = [summary["sup"] for _, summary in points]
    residuals = [summary for _, summary in points]
    slope = intercept = r2 = None
    ok_points = [(e, s) for e, s in zip(eps_list, sups) if s > 0]
    if len(ok_points) >= 3:
        slope, intercept, r2 = slope_fit(ok_points)
    passed = (
        slope is not None
        and cfg.sweep.slope_min <= slope <= cfg.sweep.slope_max
        and r2 >= cfg.sweep.r2_min
    )
    return SweepReport(
        model=cfg.model.variant,
        eps=eps_list,
        sup_phi=sups,
        slope=slope,
        intercept=intercept,
        r2=r2,
        passed=bool(passed),
        residuals=residuals,
        wall_clock=_time.perf_counter() - t0,
        trajectories=[traj for traj, _ in points] if keep_trajectories else None,
        limit_trajectory=limit_traj if keep_trajectories else None,
    )


# -- invariant battery -------------------------------------------------------------


def check_suite(cfg: ExperimentConfig) -> dict:
    """Run the module invariant checks on the configured model.

    Returns {"checks": [{name, value, tol, pass}], "pass": bool}.
    """
    cfg.validate()
    grid = make_grid(cfg)
    model = make_model(cfg, grid)
    law = model.law
    ws = workspace_for(grid)
    rng = np.random.default_rng(cfg.initial.seed)
    checks = []

    def add(name, value, tol):
        checks.append({"name": name, "value": float(value), "tol": float(tol), "pass": bool(value <= tol)})

    noise = _band_limited_noise(grid, cfg.initial.seed + 1)
    f = ScalarField(grid, 1.0 + 0.3 * noise)

    spec = ws.fwd(f.values)
    back = ws.inv(spec)
    add("transform_round_trip", np.max(np.abs(back - f.values)) / np.max(np.abs(f.values)), 1e-12)

    full = np.fft.fftn(f.values) / grid.size
    parseval = grid.measure * np.sum(np.abs(full) ** 2)
    add("parseval", abs(parseval - l2_norm(f) ** 2) / l2_norm(f) ** 2, 1e-12)

    from .fields import gradient as _grad

    g = _grad(f)
    add("gradient_zero_mean", max(abs(integral(c)) for c in g.components), 1e-12 * max(l2_norm(f), 1.0))

    d1 = dealias(f)
    d2 = dealias(d1)
    add("dealias_idempotent", np.max(np.abs(d2.values - d1.values)), 0.0)

    rhos = rng.uniform(0.2, 5.0, size=64)
    add(
        "thermo_rho_h2_eq_p1",
        np.max(np.abs(rhos * law.d2h(rhos) - law.dp(rhos)) / np.abs(law.dp(rhos))),
        1e-12,
    )
    add(
        "thermo_rho_h1_eq_p_plus_h",
        np.max(np.abs(rhos * law.dh(rhos) - (law.p(rhos) + law.h(rhos))) / np.abs(law.p(rhos) + law.h(rhos))),
        1e-12,
    )

    pairs = rng.uniform(0.05, 10.0, size=(256, 2))
    hr = h_rel(law, pairs[:, 0], pairs[:, 1])
    add("h_rel_nonnegative", max(0.0, -float(np.min(hr))), 0.0)

    beta = model.screening if isinstance(model, EulerPoissonModel) else 1.0
    rho_r = ScalarField(grid, 1.0 + 0.2 * noise)
    c = elliptic.solve_screened_poisson(rho_r, beta)
    lap_c = ScalarField(grid, ws.lap(c.values))
    resid = l2_norm(-lap_c + beta * c - (rho_r - mean(rho_r))) / max(l2_norm(rho_r - mean(rho_r)), 1e-300)
    add("elliptic_residual", resid, 1e-10)
    scale = max(abs(integral((rho_r - mean(rho_r)) * c)), 1e-300)
    add("elliptic_energy_identity", elliptic.energy_identity_residual(rho_r, c, beta) / scale, 1e-10)

    c_for_model = c if isinstance(model, EulerPoissonModel) else None
    add("stress_identity", stress_identity_residual(model, rho_r, c_for_model), 1e-8)

    eps = cfg.time.epsilon
    rho0, m0 = make_initial(cfg, model, eps)
    short_T = min(cfg.time.T, 20.0 * cfl_dt(model, RelaxState(rho0, m0 or VectorField.zeros(grid)), eps))
    state = RelaxState(rho=rho0, m=m0 if m0 is not None else VectorField.zeros(grid), time=0.0)
    traj = run_relax(model, state, eps, short_T, StepControl(cfl_safety=cfg.time.cfl_safety), n_output=4)
    mass = traj.series["mass"]
    add("mass_conservation", np.max(np.abs(mass - mass[0])) / abs(mass[0]), 1e-10)
    e = traj.series["total_energy"]
    _, resid_e = energy_dissipation_residual(traj, eps)
    slack = 1e-12 * abs(e[0]) + float(np.max(np.abs(resid_e))) * float(np.max(np.diff(traj.series["t"])))
    add("energy_nonincreasing", max(0.0, float(np.max(np.diff(e)))), slack)

    probe = ScalarField(grid, 2.0 + 0.3 * noise)
    direction = ScalarField(grid, _band_limited_noise(grid, cfg.initial.seed + 2))
    gat = gateaux_check(model, probe, direction, [1e-2, 1e-3, 1e-4])
    if gat.rate is not None and law.gamma != 2.0:
        add("gateaux_rate_error", abs(gat.rate - 2.0), 0.25)
    add("gateaux_final_residual", gat.final_relative_error, 1e-6)

    return {"checks": checks, "pass": all(c["pass"] for c in checks)}


# -- persistence --------------------------------------------------------------------


def write_series_csv(traj: Trajectory, eps: Optional[float], path) -> None:
    """Output-cadence diagnostic table with the standard column set."""
    t_steps = traj.series["t"]
    out_t = traj.series.get("output_t", traj.times)
    n_out = len(out_t) - 1
    steps_per = (len(t_steps) - 1) // max(n_out, 1) if n_out else 1
    _, resid = (
        energy_dissipation_residual(traj, eps)
        if eps is not None
        else (None, np.zeros(max(len(t_steps) - 1, 1)))
    )
    if eps is None:
        t_mid = None
        resid = np.abs(np.diff(traj.series["potential"]) / np.diff(t_steps) + 0.5 * (
            traj.series["dissipation"][:-1] + traj.series["dissipation"][1:]
        ))
    else:
        resid = np.abs(resid)
    cols = ["t", "mass", "total_energy", "kinetic", "potential", "dissipation", "phi", "psi", "energy_residual"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for j, tj in enumerate(out_t):
            idx = min(j * steps_per, len(t_steps) - 1)
            if eps is None:
                kin = 0.0
                tot = traj.series["potential"][idx]
            else:
                kin = traj.series["kinetic"][idx]
                tot = traj.series["total_energy"][idx]
            lo = max((j - 1) * steps_per, 0)
            hi = max(j * steps_per, 1)
            r = float(np.max(resid[lo:hi])) if j > 0 and len(resid) else 0.0
            phi_v = traj.series.get("phi", np.full(len(out_t), np.nan))[j]
            psi_v = traj.series.get("psi", np.full(len(out_t), np.nan))[j]
            row = [
                tj,
                traj.series["mass"][idx],
                tot,
                kin,
                traj.series["potential"][idx],
                traj.series["dissipation"][idx],
                phi_v,
                psi_v,
                r,
            ]
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_checkpoint(traj: Trajectory, cfg: ExperimentConfig, directory) -> None:
    """Final-state field dumps plus a JSON metadata record."""
    os.makedirs(directory, exist_ok=True)
    last = traj.snapshots[-1]
    dump_field_csv(last.rho, os.path.join(directory, "rho.csv"))
    if hasattr(last, "m"):
        for ax, comp in enumerate(last.m.components):
            dump_field_csv(comp, os.path.join(directory, f"m{ax}.csv"))
    meta = {
        "model": cfg.model.variant,
        "parameters": asdict(cfg.model),
        "epsilon": traj.epsilon,
        "time": float(last.time),
        "step": int(len(traj.series["t"]) - 1),
    }
    with open(os.path.join(directory, "checkpoint.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def report(directory) -> dict:
    """Consolidate the JSON summaries under a directory into one report."""
    entries = []
    for name in sorted(os.listdir(directory)):
        if not name.endswith(".json"):
            continue
        with open(os.path.join(directory, name)) as fh:
            try:
                entries.append({"file": name, "data": json.load(fh)})
            except json.JSONDecodeError:
                continue
    lines = []
    all_pass = True
    for entry in entries:
        data = entry["data"]
        if "slope" in data:
            status = "pass" if data.get("pass") else "FAIL"
            all_pass &= bool(data.get("pass"))
            lines.append(
                f"{entry['file']:<32} model={data.get('model', '?'):<16} "
                f"slope={data.get('slope'):.3f} r2={data.get('r2'):.4f} {status}"
            )
        elif "checks" in data:
            status = "pass" if data.get("pass") else "FAIL"
            all_pass &= bool(data.get("pass"))
            worst = max((c["value"] for c in data["checks"]), default=0.0)
            lines.append(f"{entry['file']:<32} checks={len(data['checks'])} worst={worst:.3e} {status}")
        else:
            lines.append(f"{entry['file']:<32} (unrecognized summary)")
    return {"entries": entries, "table": "\n".join(lines), "pass": all_pass}
