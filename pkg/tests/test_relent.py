"""Relative-energy functionals, relative stress, identity residuals, transport distance."""

import numpy as np
import pytest

from relaxflow.dynamics import (
    LimitState,
    RelaxState,
    StepControl,
    Trajectory,
    equilibrium_momentum,
    limit_cfl_dt,
    run_limit,
    run_relax,
    stress,
)
from relaxflow.elliptic import solve_screened_poisson
from relaxflow.energetics import (
    EulerKortewegModel,
    EulerModel,
    EulerPoissonModel,
    GammaLaw,
)
from relaxflow.fields import (
    ScalarField,
    TorusGrid,
    VectorField,
    integral,
    workspace_for,
)
from relaxflow.relent import (
    ep_relative_total,
    gradflow_relent_residual,
    phi,
    psi,
    relative_stress,
    relax_limit_inequality_residual,
    reltote_residual,
    wasserstein2_1d,
)

from conftest import band_limited, positive_band_limited

LAW = GammaLaw(1.0, 2.0)
EULER = EulerModel(LAW)
EP = EulerPoissonModel(LAW, chemo=0.1, screening=1.0)
EK = EulerKortewegModel(LAW, capillarity=0.01)


def slice_trajectory(traj, step):
    out = Trajectory(
        model=traj.model,
        epsilon=traj.epsilon,
        times=np.asarray(traj.times)[::step],
        snapshots=traj.snapshots[::step],
        series=traj.series,
        completed=traj.completed,
    )
    return out


class TestPhiPsi:
    def test_identical_states_vanish(self, grid1d):
        rho = positive_band_limited(grid1d, 61)
        m = VectorField((band_limited(grid1d, 62, amplitude=0.1),))
        assert phi(rho, m, rho, m, LAW) == 0.0
        assert psi(rho, m, rho, m, LAW, 0.01) == 0.0

    def test_uniform_velocity_gap(self, grid1d):
        rho = ScalarField.constant(grid1d, 1.0)
        m = VectorField((ScalarField.constant(grid1d, 0.2),))
        m0 = VectorField.zeros(grid1d)
        assert phi(rho, m, rho, m0, LAW) == pytest.approx(0.04 * np.pi, rel=1e-12)

    def test_phi_against_independent_quadrature(self, grid1d):
        # independent oracle: resample both integrands spectrally on a finer
        # grid and integrate there
        rho = positive_band_limited(grid1d, 63, base=1.5)
        rho_bar = positive_band_limited(grid1d, 64, base=1.5)
        m = VectorField((band_limited(grid1d, 65, amplitude=0.2),))
        m_bar = VectorField((band_limited(grid1d, 66, amplitude=0.2),))
        ours = phi(rho, m, rho_bar, m_bar, LAW)

        fine = TorusGrid(dim=1, n=512)

        def resample(f):
            spec = np.fft.rfft(f.values) / grid1d.n
            pad = np.zeros(fine.n // 2 + 1, dtype=complex)
            pad[: grid1d.n // 2 + 1] = spec
            return np.fft.irfft(pad * fine.n, n=fine.n)

        r, rb = resample(rho), resample(rho_bar)
        mv, mb = resample(m[0]), resample(m_bar[0])
        integrand = (
            LAW.h(r) - LAW.h(rb) - LAW.dh(rb) * (r - rb) + 0.5 * r * (mv / r - mb / rb) ** 2
        )
        oracle = np.sum(integrand) * fine.cell_volume
        assert ours == pytest.approx(oracle, rel=1e-10)

    def test_psi_capillary_addend_and_monotonicity(self, grid1d):
        x = grid1d.axes()[0]
        rho_bar = ScalarField(grid1d, 1.2 + 0.05 * np.sin(3 * x))
        rho = ScalarField(grid1d, rho_bar.values + 0.1 * np.cos(x))
        m = VectorField((band_limited(grid1d, 67, amplitude=0.1),))
        base = phi(rho, m, rho_bar, m, LAW)
        val = psi(rho, m, rho_bar, m, LAW, 1.0)
        assert val == pytest.approx(base + 0.005 * np.pi, rel=1e-10)
        assert psi(rho, m, rho_bar, m, LAW, 2.0) > val


class TestEpRelativeTotal:
    def test_identical_states(self, grid1d):
        rho = positive_band_limited(grid1d, 68)
        m = VectorField((band_limited(grid1d, 69, amplitude=0.1),))
        c = solve_screened_poisson(rho, EP.screening)
        assert ep_relative_total(rho, m, c, rho, m, c, LAW, EP.chemo) == 0.0

    def test_uniform_reduces_to_phi(self, grid1d):
        rho = ScalarField.constant(grid1d, 1.4)
        bar = ScalarField.constant(grid1d, 1.0)
        m = VectorField((ScalarField.constant(grid1d, 0.1),))
        mb = VectorField.zeros(grid1d)
        c = solve_screened_poisson(rho, EP.screening)
        cb = solve_screened_poisson(bar, EP.screening)
        total = ep_relative_total(rho, m, c, bar, mb, cb, LAW, EP.chemo)
        assert total == pytest.approx(phi(rho, m, bar, mb, LAW), rel=1e-12)

    def test_rejects_inconsistent_solves(self, grid1d):
        rho = positive_band_limited(grid1d, 70)
        m = VectorField.zeros(grid1d)
        bad_c = ScalarField.constant(grid1d, 0.3)  # nonzero mean
        c = solve_screened_poisson(rho, EP.screening)
        with pytest.raises(ValueError, match="zero-mean"):
            ep_relative_total(rho, m, bad_c, rho, m, c, LAW, EP.chemo)

    def test_convexity_lower_bound_sampled(self, grid1d):
        # with K_hat estimated over the same sample family, the relative
        # potential dominates lambda_hat times the internal part
        from relaxflow.elliptic import estimate_K
        from relaxflow.energetics import h_rel

        bar = ScalarField(grid1d, 1 + 0.2 * np.cos(grid1d.axes()[0]))
        samples = [positive_band_limited(grid1d, 4000 + s, amplitude=0.3) for s in range(6)]
        k_hat = estimate_K(samples, bar, EP.screening, LAW)
        lam = 1 - k_hat * EP.chemo / 2
        assert lam > 0
        cb = solve_screened_poisson(bar, EP.screening)
        for s in samples:
            c = solve_screened_poisson(s, EP.screening)
            hrel = integral(ScalarField(grid1d, h_rel(LAW, s.values, bar.values)))
            coupling = integral((s - bar) * (c - cb))
            assert hrel - 0.5 * EP.chemo * coupling >= lam * hrel - 1e-12 * max(hrel, 1.0)


class TestRelativeStress:
    def _models(self):
        return {
            "euler": EULER,
            "euler_poisson": EP,
            "euler_korteweg": EulerKortewegModel(LAW, capillarity=0.3),
        }

    def _solves(self, model, rho, bar):
        if isinstance(model, EulerPoissonModel):
            return solve_screened_poisson(rho, model.screening), solve_screened_poisson(bar, model.screening)
        return None, None

    @pytest.mark.parametrize("key", ["euler", "euler_poisson", "euler_korteweg"])
    def test_vanishes_at_reference(self, grid1d, key):
        model = self._models()[key]
        rho = positive_band_limited(grid1d, 71)
        c, cb = self._solves(model, rho, rho)
        S = relative_stress(model, rho, rho, c, cb)
        assert np.allclose(S[0][0].values, 0.0, atol=1e-13)

    def test_euler_gamma2_closed_form(self, grid1d):
        rho = positive_band_limited(grid1d, 72)
        bar = positive_band_limited(grid1d, 73)
        S = relative_stress(EULER, rho, bar)
        assert np.allclose(S[0][0].values, -((rho.values - bar.values) ** 2), atol=1e-11)

    @pytest.mark.parametrize("key", ["euler", "euler_poisson", "euler_korteweg"])
    def test_definition_by_tau_differences(self, grid1d, key):
        # oracle: S(rho)-S(rho_bar)-(d/dtau) S(rho_bar + tau delta)|_0 with a
        # centered tau difference for the directional derivative
        model = self._models()[key]
        bar = positive_band_limited(grid1d, 74, base=1.5)
        delta = band_limited(grid1d, 75, amplitude=0.3)
        rho = ScalarField(grid1d, bar.values + delta.values)
        tau = 1e-5

        def stress_at(r):
            c = solve_screened_poisson(r, EP.screening) if key == "euler_poisson" else None
            return stress(model, r, c)[0][0].values

        ds = (stress_at(ScalarField(grid1d, bar.values + tau * delta.values))
              - stress_at(ScalarField(grid1d, bar.values - tau * delta.values))) / (2 * tau)
        oracle = stress_at(rho) - stress_at(bar) - ds
        c, cb = self._solves(model, rho, bar)
        ours = relative_stress(model, rho, bar, c, cb)[0][0].values
        scale = max(np.max(np.abs(oracle)), 1e-30)
        assert np.max(np.abs(ours - oracle)) < 1e-6 * scale

    @pytest.mark.parametrize("key", ["euler", "euler_poisson", "euler_korteweg"])
    def test_quadratic_smallness(self, grid1d, key):
        model = self._models()[key]
        bar = positive_band_limited(grid1d, 76, base=1.5)
        delta = band_limited(grid1d, 77)
        norms = []
        for tau in (1e-1, 1e-2, 1e-3):
            rho = ScalarField(grid1d, bar.values + tau * delta.values)
            c, cb = self._solves(model, rho, bar)
            S = relative_stress(model, rho, bar, c, cb)
            norms.append(np.max(np.abs(S[0][0].values)) / tau**2)
        norms = np.asarray(norms)
        assert np.max(norms) / np.min(norms) < 1.5

    def test_ek_grouped_assembly_agreement(self, grid1d):
        # contraction of the relative stress with grad(u_bar) must equal the
        # grouped integral form after discrete integration by parts
        model = EulerKortewegModel(LAW, capillarity=0.3)
        ws = workspace_for(grid1d)
        bar = positive_band_limited(grid1d, 78, base=1.5)
        rho = ScalarField(grid1d, bar.values + band_limited(grid1d, 79, amplitude=0.2).values)
        u_bar = band_limited(grid1d, 80, amplitude=0.4).values
        grad_u = ws.deriv(u_bar, 0)

        S = relative_stress(model, rho, bar)
        direct = integral(ScalarField(grid1d, grad_u * S[0][0].values))

        delta = rho.values - bar.values
        grad_d = ws.deriv(delta, 0)
        prel = LAW.p_rel(rho.values, bar.values)
        grouped = (
            -integral(ScalarField(grid1d, grad_u * (prel + 0.5 * model.capillarity * grad_d**2)))
            - model.capillarity * integral(ScalarField(grid1d, grad_u * grad_d * grad_d))
            - model.capillarity * integral(ScalarField(grid1d, ws.deriv(grad_u, 0) * delta * grad_d))
        )
        assert direct == pytest.approx(grouped, rel=1e-11)


def _two_relax_trajectories(model, grid, eps, T, n_out, dt=None, amp_gap=1.05):
    x = grid.axes()[0]
    rho_a = ScalarField(grid, 1 + 0.15 * np.cos(x))
    rho_b = ScalarField(grid, 1 + 0.15 * amp_gap * np.cos(x))
    control = StepControl(dt=dt)
    ta = run_relax(model, RelaxState(rho_a, equilibrium_momentum(model, rho_a, eps)), eps, T, control, n_output=n_out)
    tb = run_relax(model, RelaxState(rho_b, equilibrium_momentum(model, rho_b, eps)), eps, T, control, n_output=n_out)
    return ta, tb


class TestReltoteResidual:
    @pytest.mark.parametrize("key", ["euler", "euler_poisson", "euler_korteweg"])
    def test_identical_trajectories_vanish(self, grid1d, key):
        model = {"euler": EULER, "euler_poisson": EP, "euler_korteweg": EK}[key]
        eps = 0.1
        ta, _ = _two_relax_trajectories(model, grid1d, eps, 0.01, 4)
        _, resid = reltote_residual(ta, ta, model, eps)
        assert np.max(np.abs(resid)) < 1e-12

    def test_residual_refines_at_scheme_order(self, grid1d):
        model = EULER
        eps = 0.1

        def max_resid(n_out):
            # snapshots every step: dt equals the output interval
            T = 0.008
            dt = T / n_out
            ta, tb = _two_relax_trajectories(model, grid1d, eps, T, n_out, dt=dt)
            _, r = reltote_residual(ta, tb, model, eps)
            return np.max(np.abs(r))

        ratio = max_resid(16) / max_resid(32)
        assert ratio >= 3.0

    def test_near_uniform_euler_residual_small(self, grid1d):
        model = EULER
        eps = 0.1
        x = grid1d.axes()[0]
        rho_a = ScalarField(grid1d, 1 + 1e-3 * np.cos(x))
        rho_b = ScalarField(grid1d, 1 + 1.2e-3 * np.cos(x))
        dt = 1e-4
        control = StepControl(dt=dt)
        T, n_out = 0.004, 40
        ta = run_relax(model, RelaxState(rho_a, equilibrium_momentum(model, rho_a, eps)), eps, T, control, n_output=n_out)
        tb = run_relax(model, RelaxState(rho_b, equilibrium_momentum(model, rho_b, eps)), eps, T, control, n_output=n_out)
        times, resid = reltote_residual(ta, tb, model, eps)
        # dominant term of the identity: the friction dissipation
        diss_scale = np.max(np.abs(np.diff([
            phi(sa.rho, sa.m, sb.rho, sb.m, LAW) for sa, sb in zip(ta.snapshots, tb.snapshots)
        ])) / np.diff(ta.times))
        assert np.max(np.abs(resid)) < 1e-3 * max(diss_scale, 1e-30)

    def test_mismatched_times_rejected(self, grid1d):
        ta, tb = _two_relax_trajectories(EULER, grid1d, 0.1, 0.01, 4)
        bad = slice_trajectory(tb, 2)
        with pytest.raises(ValueError):
            reltote_residual(ta, bad, EULER, 0.1)


class TestInequalityResidual:
    def _setup(self, model, grid, eps, T, n_out):
        x = grid.axes()[0]
        rho0 = ScalarField(grid, 1 + 0.2 * np.cos(x))
        if isinstance(model, EulerKortewegModel):
            kmax = (2 * np.pi / grid.length) * (grid.n / 3)
            dt = 0.4 * 2.8 / (LAW.dp(1.2) * kmax**2) / 4
            lcontrol = StepControl(dt=dt, scheme="semi_implicit_spectral")
        else:
            lcontrol = StepControl(scheme="explicit_rk4")
        lt = run_limit(model, LimitState(rho0), T, lcontrol, n_output=n_out)
        rt = run_relax(
            model,
            RelaxState(rho0, equilibrium_momentum(model, rho0, eps)),
            eps,
            T,
            StepControl(),
            n_output=n_out,
            reference=lt,
        )
        return rt, lt

    @pytest.mark.parametrize("key", ["euler", "euler_poisson", "euler_korteweg"])
    def test_near_zero_start_and_smooth_slack(self, grid1d, key):
        model = {"euler": EULER, "euler_poisson": EP, "euler_korteweg": EK}[key]
        eps = 0.1
        rt, lt = self._setup(model, grid1d, eps, 0.02, 10)
        rep = relax_limit_inequality_residual(rt, lt, model, eps)
        assert rep.lhs[0] == 0.0
        scale = max(rep.term_scale(), 1e-30)
        # smooth well-prepared run: near-equality within a small fraction of
        # the dominant term
        assert np.max(np.abs(rep.imbalance)) < 2e-2 * scale

    def test_ablation_breaks_balance(self, grid1d):
        model = EP
        eps = 0.05
        rt, lt = self._setup(model, grid1d, eps, 0.02, 10)
        full = relax_limit_inequality_residual(rt, lt, model, eps)
        ablated = relax_limit_inequality_residual(rt, lt, model, eps, drop_dissipation=True)
        band = 10 * max(np.max(np.abs(full.imbalance)), 1e-30)
        assert np.max(np.abs(ablated.imbalance)) > band

    def test_term_series_exposed(self, grid1d):
        rt, lt = self._setup(EP, grid1d, 0.1, 0.01, 5)
        rep = relax_limit_inequality_residual(rt, lt, EP, 0.1)
        for name in ("dissipation", "error", "pressure", "coupling", "tensor", "convective"):
            assert len(rep.terms[name]) == len(rep.times)
        assert np.all(rep.terms["dissipation"] >= 0)


class TestGradflowResidual:
    def test_identical_trajectories_vanish(self, grid1d):
        rho0 = positive_band_limited(grid1d, 81, amplitude=0.2)
        lt = run_limit(EULER, LimitState(rho0), 0.01, StepControl(), n_output=5)
        _, resid = gradflow_relent_residual(lt, lt, EULER)
        assert np.max(np.abs(resid)) < 1e-12

    def test_porous_nearby_solutions_balance(self, grid1d):
        x = grid1d.axes()[0]
        rho_a = ScalarField(grid1d, 1 + 0.2 * np.cos(x))
        rho_b = ScalarField(grid1d, 1 + 0.22 * np.cos(x))
        dt = limit_cfl_dt(EULER, rho_a) / 2
        T = 0.02
        n_out = int(round(T / dt))
        la = run_limit(EULER, LimitState(rho_a), T, StepControl(dt=dt), n_output=n_out)
        lb = run_limit(EULER, LimitState(rho_b), T, StepControl(dt=dt), n_output=n_out)
        times, resid = gradflow_relent_residual(la, lb, EULER)
        ws = workspace_for(grid1d)
        diss = []
        for sa, sb in zip(la.snapshots, lb.snapshots):
            dg = LAW.dh(sa.rho.values) - LAW.dh(sb.rho.values)
            diss.append(integral(ScalarField(grid1d, sa.rho.values * ws.deriv(dg, 0) ** 2)))
        diss = np.asarray(diss)
        dt_out = np.diff(la.times)
        integrated_resid = np.sum(np.abs(resid) * dt_out)
        integrated_diss = np.sum(0.5 * (diss[:-1] + diss[1:]) * dt_out)
        assert integrated_resid < 0.01 * integrated_diss

    def test_residual_refines_with_dt(self, grid1d):
        x = grid1d.axes()[0]
        rho_a = ScalarField(grid1d, 1 + 0.2 * np.cos(x))
        rho_b = ScalarField(grid1d, 1 + 0.22 * np.cos(x))

        def max_resid(refine):
            dt = limit_cfl_dt(EULER, rho_a) / refine
            T = 0.01
            n_out = int(round(T / dt))
            la = run_limit(EULER, LimitState(rho_a), T, StepControl(dt=dt), n_output=n_out)
            lb = run_limit(EULER, LimitState(rho_b), T, StepControl(dt=dt), n_output=n_out)
            _, r = gradflow_relent_residual(la, lb, EULER)
            return np.max(np.abs(r))

        assert max_resid(1) / max_resid(2) >= 3.0


class TestWasserstein:
    def test_identical_densities(self, grid1d):
        rho = positive_band_limited(grid1d, 82)
        assert wasserstein2_1d(rho, rho) == 0.0

    def test_translated_bumps(self):
        grid = TorusGrid(dim=1, n=512)
        x = grid.axes()[0]
        d = 0.4

        def bump(center):
            v = np.exp(-((x - center) ** 2) / (2 * 0.3**2))
            return ScalarField(grid, v)

        a, b = bump(2.2), bump(2.2 + d)
        assert wasserstein2_1d(a, b) == pytest.approx(d, abs=1e-4)

    def test_against_discrete_ot_oracle(self):
        # oracle: exact 1-d optimal transport between the atomic measures
        # (cell mass at the nodes) via the monotone two-pointer coupling;
        # the atomic-vs-interpolated gap shrinks like dx^2, so the oracle
        # runs on a finer grid
        grid = TorusGrid(dim=1, n=1024)
        rho = positive_band_limited(grid, 83, base=1.5, amplitude=0.4)
        bar = positive_band_limited(grid, 84, base=1.5, amplitude=0.4)
        bar = ScalarField(grid, bar.values * integral(rho) / integral(bar))

        x = grid.axes()[0]
        wa = rho.values / rho.values.sum()
        wb = bar.values / bar.values.sum()
        i = j = 0
        ra, rb = wa.copy(), wb.copy()
        cost = 0.0
        while i < len(ra) and j < len(rb):
            m = min(ra[i], rb[j])
            cost += m * (x[i] - x[j]) ** 2
            ra[i] -= m
            rb[j] -= m
            if ra[i] <= 1e-17:
                i += 1
            if rb[j] <= 1e-17:
                j += 1
        oracle = np.sqrt(cost)
        ours = wasserstein2_1d(rho, bar)
        assert ours == pytest.approx(oracle, abs=1e-4)

    def test_mass_mismatch_rejected(self, grid1d):
        a = ScalarField.constant(grid1d, 1.0)
        b = ScalarField.constant(grid1d, 1.01)
        with pytest.raises(ValueError, match="mass"):
            wasserstein2_1d(a, b)

    def test_needs_one_dimension(self, grid2d):
        rho = positive_band_limited(grid2d, 85)
        with pytest.raises(ValueError):
            wasserstein2_1d(rho, rho)
