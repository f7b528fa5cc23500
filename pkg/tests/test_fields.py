"""Spectral calculus: exactness on eigenfunctions, quadrature, dealiasing."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relaxflow.fields import (
    ScalarField,
    TorusGrid,
    VectorField,
    dealias,
    divergence,
    dump_field_csv,
    gradient,
    integral,
    l2_norm,
    laplacian,
    load_field_csv,
    lq_norm,
    mean,
    workspace_for,
)

from conftest import band_limited


class TestTorusGrid:
    def test_basic_properties(self):
        g = TorusGrid(dim=1, n=64)
        assert g.shape == (64,)
        assert g.measure == pytest.approx(2 * np.pi)
        assert g.cell_volume == pytest.approx(2 * np.pi / 64)

    def test_measure_2d(self):
        g = TorusGrid(dim=2, n=16, length=1.0)
        assert g.measure == pytest.approx(1.0)

    def test_wavenumbers_symmetric(self):
        g = TorusGrid(dim=1, n=16)
        k = g.wavenumbers[0]
        assert k[0] == 0.0
        # every nonzero non-Nyquist mode has a mirror
        assert np.allclose(sorted(k[1:8]), sorted(-k[9:]))
        assert k[8] == pytest.approx(-8.0)  # Nyquist, symmetric-set convention

    @pytest.mark.parametrize("dim,n", [(3, 16), (0, 16), (1, 15), (1, 4)])
    def test_rejects_bad_shape(self, dim, n):
        with pytest.raises(ValueError):
            TorusGrid(dim=dim, n=n)

    def test_rejects_bad_length(self):
        with pytest.raises(ValueError):
            TorusGrid(dim=1, n=16, length=-1.0)


class TestFieldTypes:
    def test_scalar_shape_mismatch(self, grid1d):
        with pytest.raises(ValueError):
            ScalarField(grid1d, np.zeros(17))

    def test_scalar_rejects_nonfinite(self, grid1d):
        vals = np.zeros(grid1d.shape)
        vals[3] = np.inf
        with pytest.raises(ValueError):
            ScalarField(grid1d, vals)

    def test_vector_needs_matching_grids(self, grid1d):
        other = TorusGrid(dim=1, n=128)
        with pytest.raises(ValueError):
            VectorField((ScalarField.zeros(grid1d), ScalarField.zeros(other)))

    def test_vector_component_count(self, grid2d):
        with pytest.raises(ValueError):
            VectorField((ScalarField.zeros(grid2d),))

    def test_arithmetic(self, grid1d):
        f = ScalarField.constant(grid1d, 2.0)
        g = ScalarField.constant(grid1d, 3.0)
        assert np.all((f + g).values == 5.0)
        assert np.all((f * g).values == 6.0)
        assert np.all((f - 2.0 * g).values == -4.0)
        assert np.all((f / g).values == pytest.approx(2.0 / 3.0))


class TestGradient:
    def test_sin_to_cos(self, grid1d):
        f = ScalarField.from_function(grid1d, np.sin)
        g = gradient(f)[0]
        x = grid1d.axes()[0]
        assert np.allclose(g.values, np.cos(x), atol=1e-13)
        assert g.values[0] == pytest.approx(1.0, abs=1e-13)

    def test_constant_field(self, grid1d):
        f = ScalarField.constant(grid1d, 3.7)
        assert np.allclose(gradient(f)[0].values, 0.0, atol=1e-14)

    def test_2d_product_mode(self, grid2d):
        f = ScalarField.from_function(grid2d, lambda x, y: np.sin(2 * x) * np.cos(y))
        g = gradient(f)
        x, y = grid2d.meshgrid()
        assert np.allclose(g[0].values, 2 * np.cos(2 * x) * np.cos(y), atol=1e-12)
        assert np.allclose(g[1].values, -np.sin(2 * x) * np.sin(y), atol=1e-12)

    def test_matches_centered_differences_at_rate_2(self):
        # 2nd-order FD oracle on a refinement ladder; the spectral result is
        # the reference, the FD error must shrink at rate 2.
        def fd_error(n):
            g = TorusGrid(dim=1, n=n)
            x = g.axes()[0]
            f = ScalarField(g, np.sin(3 * x) + 0.5 * np.cos(5 * x))
            spectral = gradient(f)[0].values
            h = g.spacing
            fd = (np.roll(f.values, -1) - np.roll(f.values, 1)) / (2 * h)
            return np.max(np.abs(fd - spectral))

        errors = [fd_error(n) for n in (64, 128, 256)]
        rates = np.log2(np.asarray(errors[:-1]) / np.asarray(errors[1:]))
        assert np.all(rates > 1.9) and np.all(rates < 2.1)


class TestDivergence:
    def test_sin_1d(self, grid1d):
        v = VectorField((ScalarField.from_function(grid1d, np.sin),))
        x = grid1d.axes()[0]
        assert np.allclose(divergence(v).values, np.cos(x), atol=1e-13)

    def test_constant_vector(self, grid2d):
        v = VectorField((ScalarField.constant(grid2d, 1.0), ScalarField.constant(grid2d, -2.0)))
        assert np.allclose(divergence(v).values, 0.0, atol=1e-14)

    def test_integral_vanishes(self, grid2d):
        v = VectorField((band_limited(grid2d, 7), band_limited(grid2d, 8)))
        assert abs(integral(divergence(v))) < 1e-12


class TestLaplacian:
    def test_cos_2x(self, grid1d):
        f = ScalarField.from_function(grid1d, lambda x: np.cos(2 * x))
        assert np.allclose(laplacian(f).values, -4 * f.values, atol=1e-12)

    def test_constant(self, grid2d):
        f = ScalarField.constant(grid2d, 5.0)
        assert np.allclose(laplacian(f).values, 0.0, atol=1e-13)

    def test_composition_oracle(self, grid2d):
        f = band_limited(grid2d, 3)
        composed = divergence(gradient(f))
        direct = laplacian(f)
        scale = np.max(np.abs(direct.values))
        assert np.max(np.abs(composed.values - direct.values)) < 1e-10 * scale


class TestQuadrature:
    def test_mean_and_integral(self, grid1d):
        f = ScalarField.from_function(grid1d, lambda x: 1 + 0.2 * np.cos(x))
        assert mean(f) == pytest.approx(1.0, abs=1e-14)
        assert integral(f) == pytest.approx(2 * np.pi, abs=1e-13)

    def test_zero_norm(self, grid1d):
        assert lq_norm(ScalarField.zeros(grid1d), 3.0) == 0.0

    def test_rejects_q_below_one(self, grid1d):
        with pytest.raises(ValueError):
            lq_norm(ScalarField.zeros(grid1d), 0.5)

    def test_lq_against_refined_quadrature(self):
        # oracle: resample the band-limited interpolant on a much finer grid
        # by spectral zero padding, then trapezoid there
        n, fine = 64, 8192
        g = TorusGrid(dim=1, n=n)
        x = g.axes()[0]
        f = ScalarField(g, 2.0 + np.cos(x) + 0.3 * np.sin(3 * x))
        spec = np.fft.rfft(f.values) / n
        pad = np.zeros(fine // 2 + 1, dtype=complex)
        pad[: n // 2 + 1] = spec
        f_fine = np.fft.irfft(pad * fine, n=fine)
        for q in (1.0, 2.0, 3.0, 4.5):
            oracle = (np.sum(np.abs(f_fine) ** q) * (g.length / fine)) ** (1.0 / q)
            assert lq_norm(f, q) == pytest.approx(oracle, rel=1e-8)


class TestDealias:
    def test_low_modes_unchanged(self, grid1d):
        f = ScalarField.from_function(grid1d, lambda x: np.cos(3 * x) + np.sin(x))
        out = dealias(f)
        assert np.array_equal(out.values, f.values)

    def test_pure_nyquist_zeroed(self, grid1d):
        nyq = np.cos(np.pi * np.arange(grid1d.n))  # alternating +-1
        out = dealias(ScalarField(grid1d, nyq))
        assert np.allclose(out.values, 0.0, atol=1e-13)

    def test_idempotent_bit_exact(self, grid1d, rng):
        f = ScalarField(grid1d, rng.standard_normal(grid1d.shape))
        once = dealias(f)
        twice = dealias(once)
        assert np.array_equal(once.values, twice.values)

    def test_cut_is_strict(self):
        g = TorusGrid(dim=1, n=12)  # n/3 = 4: mode 4 survives, mode 5 dies
        x = g.axes()[0]
        keep = ScalarField(g, np.cos(4 * x))
        kill = ScalarField(g, np.cos(5 * x))
        assert np.array_equal(dealias(keep).values, keep.values)
        assert np.allclose(dealias(kill).values, 0.0, atol=1e-13)


class TestSpectralInvariants:
    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_round_trip(self, seed):
        g = TorusGrid(dim=1, n=64)
        r = np.random.default_rng(seed)
        f = r.standard_normal(g.shape)
        ws = workspace_for(g)
        back = ws.inv(ws.fwd(f))
        assert np.max(np.abs(back - f)) < 1e-12 * max(np.max(np.abs(f)), 1e-30)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_parseval(self, seed):
        g = TorusGrid(dim=2, n=16)
        r = np.random.default_rng(seed)
        f = ScalarField(g, r.standard_normal(g.shape))
        modes = np.fft.fftn(f.values) / g.size
        by_modes = g.measure * np.sum(np.abs(modes) ** 2)
        assert by_modes == pytest.approx(l2_norm(f) ** 2, rel=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_gradient_components_have_zero_integral(self, seed):
        g = TorusGrid(dim=1, n=64)
        r = np.random.default_rng(seed)
        f = ScalarField(g, r.standard_normal(g.shape))
        for comp in gradient(f).components:
            assert abs(integral(comp)) <= 1e-12 * max(l2_norm(f), 1e-30)


class TestFieldCsv:
    def test_round_trip(self, tmp_path, grid2d):
        f = band_limited(grid2d, 11)
        path = tmp_path / "field.csv"
        dump_field_csv(f, path)
        back = load_field_csv(path)
        assert back.grid == grid2d
        assert np.array_equal(back.values, f.values)

    def test_header(self, tmp_path, grid1d):
        path = tmp_path / "f.csv"
        dump_field_csv(ScalarField.zeros(grid1d), path)
        header = path.read_text().splitlines()[0]
        assert header.startswith("# grid dim=1 n=64")
