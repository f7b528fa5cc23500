"""Pressure laws, energy functionals, and relative potential/kinetic energies.

Three energy models drive everything:

* plain Euler (optionally with a static confinement potential),
  E(rho) = int h(rho) [+ int rho V]
* Euler-Poisson with an attractive coupling to a screened Poisson field,
  E(rho) = int (h(rho) - 0.5*chemo*rho*c)
* Euler-Korteweg with capillarity,
  E(rho) = int (h(rho) + 0.5*capillarity*|grad rho|^2)

Each exposes a first-variation field (the generator of the energy's Gateaux
derivative) and a relative energy, the quadratic Taylor remainder between
two densities.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from . import elliptic
from .fields import (
    ScalarField,
    VectorField,
    gradient,
    integral,
    laplacian,
)

__all__ = [
    "GammaLaw",
    "EulerModel",
    "EulerPoissonModel",
    "EulerKortewegModel",
    "EnergyModel",
    "h_rel",
    "p_rel",
    "total_internal_energy",
    "potential_energy",
    "variational_derivative",
    "gateaux_check",
    "GateauxReport",
    "kinetic_energy",
    "relative_kinetic",
    "relative_potential_energy",
    "entropy_flux",
]


@dataclass(frozen=True)
class GammaLaw:
    """Polytropic pressure p = k rho^gamma with h = k/(gamma-1) rho^gamma.

    The pair satisfies rho h'' = p' and rho h' = p + h pointwise, and
    |p''| <= (gamma-1) p'/rho.
    """

    k: float = 1.0
    gamma: float = 2.0

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("k must be positive")
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")

    # pointwise laws; accept scalars or arrays
    def p(self, rho):
        return self.k * rho**self.gamma

    def dp(self, rho):
        return self.k * self.gamma * rho ** (self.gamma - 1.0)

    def d2p(self, rho):
        return self.k * self.gamma * (self.gamma - 1.0) * rho ** (self.gamma - 2.0)

    def h(self, rho):
        return self.k / (self.gamma - 1.0) * rho**self.gamma

    def dh(self, rho):
        return self.k * self.gamma / (self.gamma - 1.0) * rho ** (self.gamma - 1.0)

    def d2h(self, rho):
        return self.k * self.gamma * rho ** (self.gamma - 2.0)

    @property
    def pressure_curvature_bound(self) -> float:
        """The constant A with |p''| <= A p'/rho; equals gamma - 1 here."""
        return self.gamma - 1.0

    def h_rel(self, rho, rho_bar):
        """Quadratic Taylor remainder h(rho) - h(rho_bar) - h'(rho_bar)(rho - rho_bar)."""
        return self.h(rho) - self.h(rho_bar) - self.dh(rho_bar) * (rho - rho_bar)

    def p_rel(self, rho, rho_bar):
        return self.p(rho) - self.p(rho_bar) - self.dp(rho_bar) * (rho - rho_bar)

    def sound_speed(self, rho):
        return np.sqrt(self.dp(rho))


@dataclass(frozen=True)
class EulerModel:
    """Internal energy only; high-friction limit is the porous medium flow."""

    law: GammaLaw
    confinement: Optional[ScalarField] = None


@dataclass(frozen=True)
class EulerPoissonModel:
    """Attractive mean-field coupling; high-friction limit is Keller-Segel.

    chemo is the (positive) coupling strength, screening the nonnegative
    coefficient in -lap c + screening*c = rho - <rho>.  convexity_ok is a
    diagnostic flag filled in by the sampled coupling-constant check.
    """

    law: GammaLaw
    chemo: float
    screening: float = 0.0
    convexity_ok: Optional[bool] = None

    def __post_init__(self):
        if not self.chemo > 0:
            raise ValueError("chemo coupling must be positive")
        if self.screening < 0:
            raise ValueError("screening must be nonnegative")

    def with_convexity_flag(self, ok: bool) -> "EulerPoissonModel":
        return replace(self, convexity_ok=bool(ok))


@dataclass(frozen=True)
class EulerKortewegModel:
    """Capillary gradient energy; high-friction limit is Cahn-Hilliard."""

    law: GammaLaw
    capillarity: float

    def __post_init__(self):
        if not self.capillarity > 0:
            raise ValueError("capillarity must be positive")


EnergyModel = Union[EulerModel, EulerPoissonModel, EulerKortewegModel]


def _check_nonnegative_density(rho: ScalarField):
    if np.any(rho.values < 0):
        raise ValueError("density must be nonnegative")


def _check_positive_density(rho: ScalarField, what="reference density"):
    if np.any(rho.values <= 0):
        raise ValueError(f"{what} must be strictly positive")


def h_rel(law: GammaLaw, rho, rho_bar):
    """Pointwise relative internal energy; nonnegative for convex h."""
    rho_a = np.asarray(rho)
    bar_a = np.asarray(rho_bar)
    if np.any(rho_a < 0):
        raise ValueError("density must be nonnegative")
    if np.any(bar_a <= 0):
        raise ValueError("reference density must be strictly positive")
    return law.h_rel(rho_a, bar_a)


def p_rel(law: GammaLaw, rho, rho_bar):
    """Pointwise relative pressure; |p_rel| <= (gamma-1) h_rel for gamma laws."""
    rho_a = np.asarray(rho)
    bar_a = np.asarray(rho_bar)
    if np.any(rho_a < 0):
        raise ValueError("density must be nonnegative")
    if np.any(bar_a <= 0):
        raise ValueError("reference density must be strictly positive")
    return law.p_rel(rho_a, bar_a)


def total_internal_energy(law: GammaLaw, rho: ScalarField) -> float:
    _check_nonnegative_density(rho)
    return integral(ScalarField(rho.grid, law.h(rho.values)))


def _require_consistent_solve(rho: ScalarField, c: Optional[ScalarField], model) -> ScalarField:
    if c is None:
        raise ValueError("Euler-Poisson energy needs the screened-Poisson solve c of rho")
    if c.grid != rho.grid:
        raise ValueError("c lives on a different grid than rho")
    return c


def potential_energy(model: EnergyModel, rho: ScalarField, c: Optional[ScalarField] = None) -> float:
    """Total potential energy of the model at density rho.

    For the Euler-Poisson model, c must be solve_screened_poisson(rho, screening).
    """
    _check_nonnegative_density(rho)
    law = model.law
    e = integral(ScalarField(rho.grid, law.h(rho.values)))
    if isinstance(model, EulerModel):
        if model.confinement is not None:
            e += integral(rho * model.confinement)
        return e
    if isinstance(model, EulerPoissonModel):
        c = _require_consistent_solve(rho, c, model)
        return e - 0.5 * model.chemo * integral(rho * c)
    if isinstance(model, EulerKortewegModel):
        grad = gradient(rho)
        sq = sum(g.values**2 for g in grad.components)
        return e + 0.5 * model.capillarity * integral(ScalarField(rho.grid, sq))
    raise TypeError(f"unknown model {model!r}")


def variational_derivative(
    model: EnergyModel,
    rho: ScalarField,
    c: Optional[ScalarField] = None,
    include_body_force: bool = True,
) -> ScalarField:
    """Generator of the energy's first variation at rho.

    Euler: h'(rho) (+ V when a confinement potential is present and
    include_body_force is set); Euler-Poisson: h'(rho) - chemo*c;
    Euler-Korteweg: h'(rho) - capillarity * lap(rho).

    The confinement potential is a body force with no associated stress, so
    the stress identity diagnostics pass include_body_force=False.
    """
    _check_nonnegative_density(rho)
    law = model.law
    if isinstance(model, EulerModel):
        out = ScalarField(rho.grid, law.dh(rho.values))
        if include_body_force and model.confinement is not None:
            out = out + model.confinement
        return out
    if isinstance(model, EulerPoissonModel):
        c = _require_consistent_solve(rho, c, model)
        return ScalarField(rho.grid, law.dh(rho.values) - model.chemo * c.values)
    if isinstance(model, EulerKortewegModel):
        return ScalarField(rho.grid, law.dh(rho.values) - model.capillarity * laplacian(rho).values)
    raise TypeError(f"unknown model {model!r}")


def _energy_with_solve(model: EnergyModel, rho: ScalarField) -> float:
    if isinstance(model, EulerPoissonModel):
        c = elliptic.solve_screened_poisson(rho, model.screening)
        return potential_energy(model, rho, c)
    return potential_energy(model, rho)


@dataclass(frozen=True)
class GateauxReport:
    taus: np.ndarray
    residuals: np.ndarray
    pairing: float
    scale: float  # int |dE/drho| |psi|, robust when the signed pairing cancels
    rate: Optional[float]

    @property
    def final_relative_error(self) -> float:
        scale = max(abs(self.pairing), self.scale)
        return float(self.residuals[-1] / scale) if scale > 0 else float(self.residuals[-1])


def gateaux_check(model: EnergyModel, rho: ScalarField, direction: ScalarField, taus) -> GateauxReport:
    """Central-difference check of the first variation along one direction.

    residual(tau) = |(E(rho + tau psi) - E(rho - tau psi)) / (2 tau)
                     - <dE/drho, psi>|
    decreases at rate 2 in tau for smooth functionals.
    """
    taus = np.asarray(sorted(taus, reverse=True), dtype=float)
    tmax = taus.max()
    if np.any(rho.values - tmax * np.abs(direction.values) <= 0):
        raise ValueError("density must stay positive along the perturbation ladder")
    if isinstance(model, EulerPoissonModel):
        c = elliptic.solve_screened_poisson(rho, model.screening)
    else:
        c = None
    g = variational_derivative(model, rho, c)
    pairing = integral(g * direction)
    scale = integral(ScalarField(rho.grid, np.abs(g.values * direction.values)))
    residuals = []
    for tau in taus:
        ep = _energy_with_solve(model, rho + tau * direction)
        em = _energy_with_solve(model, rho - tau * direction)
        residuals.append(abs((ep - em) / (2.0 * tau) - pairing))
    residuals = np.asarray(residuals)
    positive = residuals > 0
    rate = None
    if positive.sum() >= 2:
        slope, _ = np.polyfit(np.log(taus[positive]), np.log(residuals[positive]), 1)
        rate = float(slope)
    return GateauxReport(taus=taus, residuals=residuals, pairing=pairing, scale=scale, rate=rate)


# -- kinetic side ------------------------------------------------------------

_VACUUM_FLOOR = 1e-8


def _velocity(rho: ScalarField, m: VectorField, floor: float = _VACUUM_FLOOR):
    """m/rho with the vacuum policy: below the floor, momentum must vanish."""
    rv = rho.values
    vacuum = rv < floor
    if np.any(vacuum):
        for comp in m.components:
            if np.any(comp.values[vacuum] != 0.0):
                raise ValueError("nonzero momentum over vacuum density")
    safe = np.where(vacuum, 1.0, rv)
    return [np.where(vacuum, 0.0, comp.values / safe) for comp in m.components]


def kinetic_energy(rho: ScalarField, m: VectorField) -> float:
    """int 0.5 |m|^2 / rho, with m = 0 wherever rho hits the vacuum floor."""
    u = _velocity(rho, m)
    dens = 0.5 * rho.values * sum(ui**2 for ui in u)
    return integral(ScalarField(rho.grid, dens))


def relative_kinetic(rho: ScalarField, m: VectorField, rho_bar: ScalarField, m_bar: VectorField) -> float:
    """0.5 int rho |u - u_bar|^2; depends only on rho and the velocity gap."""
    _check_positive_density(rho_bar)
    u = _velocity(rho, m)
    u_bar = [comp.values / rho_bar.values for comp in m_bar.components]
    dens = 0.5 * rho.values * sum((ui - vi) ** 2 for ui, vi in zip(u, u_bar))
    return integral(ScalarField(rho.grid, dens))


def relative_potential_energy(
    model: EnergyModel,
    rho: ScalarField,
    rho_bar: ScalarField,
    c: Optional[ScalarField] = None,
    c_bar: Optional[ScalarField] = None,
) -> float:
    """Quadratic Taylor remainder of the potential energy between two states.

    Euler: int h_rel; Euler-Poisson: int h_rel - 0.5*chemo*int (rho-rho_bar)(c-c_bar);
    Euler-Korteweg: int h_rel + 0.5*capillarity*int |grad(rho-rho_bar)|^2.
    """
    if rho_bar.grid != rho.grid:
        raise ValueError("densities live on different grids")
    _check_positive_density(rho_bar)
    base = integral(ScalarField(rho.grid, h_rel(model.law, rho.values, rho_bar.values)))
    if isinstance(model, EulerModel):
        return base
    if isinstance(model, EulerPoissonModel):
        if c is None or c_bar is None:
            raise ValueError("Euler-Poisson relative energy needs both elliptic solves")
        coupling = integral((rho - rho_bar) * (c - c_bar))
        return base - 0.5 * model.chemo * coupling
    if isinstance(model, EulerKortewegModel):
        diff = gradient(rho - rho_bar)
        sq = sum(g.values**2 for g in diff.components)
        return base + 0.5 * model.capillarity * integral(ScalarField(rho.grid, sq))
    raise TypeError(f"unknown model {model!r}")


def entropy_flux(law: GammaLaw, rho: ScalarField, m: VectorField) -> VectorField:
    """Mechanical-energy flux 0.5 m |m|^2 / rho^2 + m h'(rho)."""
    _check_positive_density(rho, "density")
    rv = rho.values
    msq = sum(comp.values**2 for comp in m.components)
    factor = 0.5 * msq / rv**2 + law.dh(rv)
    return VectorField.from_arrays(rho.grid, [comp.values * factor for comp in m.components])
