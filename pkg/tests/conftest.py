import numpy as np
import pytest

from relaxflow.fields import ScalarField, TorusGrid


@pytest.fixture
def grid1d():
    return TorusGrid(dim=1, n=64)


@pytest.fixture
def grid2d():
    return TorusGrid(dim=2, n=32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def band_limited(grid: TorusGrid, seed: int, max_mode: int = 4, amplitude: float = 1.0) -> ScalarField:
    """Random smooth field with modes up to max_mode, deterministic in seed."""
    r = np.random.default_rng(seed)
    coords = grid.meshgrid()
    scale = 2 * np.pi / grid.length
    out = np.zeros(grid.shape)
    for _ in range(5):
        ks = r.integers(1, max_mode + 1, size=grid.dim)
        phases = r.uniform(0, 2 * np.pi, size=grid.dim)
        amp = r.uniform(0.2, 1.0)
        wave = amp * np.ones(grid.shape)
        for ax in range(grid.dim):
            wave = wave * np.cos(ks[ax] * scale * coords[ax] + phases[ax])
        out += wave
    out *= amplitude / np.max(np.abs(out))
    return ScalarField(grid, out)


def positive_band_limited(grid: TorusGrid, seed: int, base: float = 1.0, amplitude: float = 0.2) -> ScalarField:
    f = band_limited(grid, seed, amplitude=amplitude)
    return ScalarField(grid, base + f.values)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance per-criterion lines past pytest's capture."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "CRITERION_LINES", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
