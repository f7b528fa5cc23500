"""Pseudo-spectral high-friction relaxation systems and their gradient-flow limits.

Periodic-domain solvers for Euler-with-friction, Euler-Poisson, and
Euler-Korteweg dynamics, their porous-medium / Keller-Segel / Cahn-Hilliard
limits, and the relative-energy diagnostics that verify the fourth-order
convergence rate of the high-friction relaxation.
"""

from .fields import (
    ScalarField,
    TorusGrid,
    VectorField,
    dealias,
    divergence,
    gradient,
    integral,
    l2_norm,
    laplacian,
    lq_norm,
    mean,
)
from .energetics import (
    EnergyModel,
    EulerKortewegModel,
    EulerModel,
    EulerPoissonModel,
    GammaLaw,
    gateaux_check,
    h_rel,
    kinetic_energy,
    p_rel,
    potential_energy,
    relative_kinetic,
    relative_potential_energy,
    variational_derivative,
)
from .elliptic import (
    elliptic_ratio,
    energy_identity_residual,
    estimate_K,
    solve_screened_poisson,
)
from .dynamics import (
    LimitState,
    RelaxState,
    StepControl,
    Trajectory,
    cfl_dt,
    energy_dissipation_residual,
    equilibrium_momentum,
    error_term,
    limit_dissipation_residual,
    rhs_limit,
    rhs_relax,
    run_limit,
    run_relax,
    step_limit,
    step_relax,
    stress,
    stress_identity_residual,
)
from .relent import (
    ep_relative_total,
    gradflow_relent_residual,
    phi,
    psi,
    relative_stress,
    relax_limit_inequality_residual,
    reltote_residual,
    wasserstein2_1d,
)
from .harness import (
    ExperimentConfig,
    make_initial,
    make_model,
    parse_config,
    slope_fit,
    sweep_eps,
)

__version__ = "0.1.0"
