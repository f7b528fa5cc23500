"""Periodic torus grids, real collocation fields, and spectral calculus.

Everything downstream (energy functionals, elliptic solves, time stepping)
is built on the primitives here: a uniform grid on [0, L)^dim with
real-to-complex FFTs, spectrally exact first/second derivatives, collocation
quadrature, and 2/3-rule dealiasing.

Fields are immutable values; all operations return new fields.  A single
SpectralWorkspace per grid caches wavenumber arrays and the dealias mask;
workspaces are cached per grid signature and must not be mutated.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "TorusGrid",
    "ScalarField",
    "VectorField",
    "SpectralWorkspace",
    "workspace_for",
    "gradient",
    "divergence",
    "laplacian",
    "mean",
    "integral",
    "lq_norm",
    "l2_norm",
    "dealias",
    "dump_field_csv",
    "load_field_csv",
]


@dataclass(frozen=True)
class TorusGrid:
    """Uniform collocation grid on the periodic box [0, length)^dim.

    dim is 1 or 2, n is the (even) number of points per axis.  Wavenumbers
    are 2*pi*j/length for j in the standard symmetric index set; the Nyquist
    mode is real-only and carries no odd derivative.
    """

    dim: int
    n: int
    length: float = 2.0 * np.pi

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 8 or self.n % 2 != 0:
            raise ValueError(f"n must be even and >= 8, got {self.n}")
        if not self.length > 0:
            raise ValueError("length must be positive")
        object.__setattr__(self, "length", float(self.length))

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def measure(self) -> float:
        return self.length**self.dim

    @cached_property
    def wavenumbers(self) -> tuple:
        """Per-axis wavenumbers 2*pi*j/L in FFT (symmetric) ordering."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)
        return tuple(k.copy() for _ in range(self.dim))

    def axes(self) -> tuple:
        """Per-axis coordinate arrays (length n each)."""
        x = np.arange(self.n) * self.spacing
        return tuple(x.copy() for _ in range(self.dim))

    def meshgrid(self) -> tuple:
        """Coordinate arrays shaped like a field (indexing='ij')."""
        return np.meshgrid(*self.axes(), indexing="ij")


class SpectralWorkspace:
    """Cached FFT-side arrays for one grid: wavenumbers, masks, transforms.

    A workspace is safe to share between pure operations but is logically
    single-use-at-a-time; concurrent simulations should each own their grid
    (and hence workspace) or rely on the read-only usage here.
    """

    def __init__(self, grid: TorusGrid):
        self.grid = grid
        n, d = grid.n, grid.dim
        scale = 2.0 * np.pi / grid.length

        full_idx = np.fft.fftfreq(n) * n  # integer mode indices, symmetric
        half_idx = np.arange(n // 2 + 1, dtype=float)

        if d == 1:
            idx = [half_idx]
        else:
            idx = [full_idx[:, None], half_idx[None, :]]

        self.mode_index = idx
        # True spectral wavenumbers (Nyquist included), used for laplacian.
        self.k = [scale * i for i in idx]
        # First-derivative wavenumbers: Nyquist zeroed (real-only mode has
        # no representable odd derivative).
        self.k_deriv = []
        for i in idx:
            kd = scale * i.copy()
            kd[np.abs(i) == n // 2] = 0.0
            self.k_deriv.append(kd)
        self.k2 = sum(ki**2 for ki in self.k)
        cut = n / 3.0
        keep = np.ones_like(self.k2, dtype=bool)
        for i in idx:
            keep &= np.abs(i) <= cut
        self.dealias_mask = keep

    # -- raw-array transforms -------------------------------------------

    def fwd(self, values: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(values)

    def inv(self, spec: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(spec, s=self.grid.shape, axes=tuple(range(self.grid.dim)))

    def deriv(self, values: np.ndarray, axis: int) -> np.ndarray:
        return self.inv(1j * self.k_deriv[axis] * self.fwd(values))

    def lap(self, values: np.ndarray) -> np.ndarray:
        return self.inv(-self.k2 * self.fwd(values))

    def dealias_arr(self, values: np.ndarray) -> np.ndarray:
        return self.inv(self.dealias_mask * self.fwd(values))


_WORKSPACES: dict = {}


def workspace_for(grid: TorusGrid) -> SpectralWorkspace:
    ws = _WORKSPACES.get(grid)
    if ws is None:
        ws = SpectralWorkspace(grid)
        _WORKSPACES[grid] = ws
    return ws


@dataclass(frozen=True)
class ScalarField:
    """Real collocation values on a TorusGrid.

    Treated as immutable after construction; arithmetic returns new fields.
    """

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: TorusGrid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def zeros(cls, grid: TorusGrid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: TorusGrid, fn) -> "ScalarField":
        return cls(grid, np.asarray(fn(*grid.meshgrid()), dtype=np.float64))

    def _values_of(self, other):
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._values_of(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._values_of(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, self._values_of(other) - self.values)

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * self._values_of(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ScalarField(self.grid, self.values / self._values_of(other))

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


@dataclass(frozen=True)
class VectorField:
    """dim ScalarField components on one shared grid."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("vector field needs at least one component")
        grid = comps[0].grid
        for c in comps:
            if c.grid != grid:
                raise ValueError("all components must share one grid")
        if len(comps) != grid.dim:
            raise ValueError(f"expected {grid.dim} components, got {len(comps)}")
        object.__setattr__(self, "components", comps)

    @property
    def grid(self) -> TorusGrid:
        return self.components[0].grid

    @property
    def dim(self) -> int:
        return len(self.components)

    @classmethod
    def from_arrays(cls, grid: TorusGrid, arrays) -> "VectorField":
        return cls(tuple(ScalarField(grid, a) for a in arrays))

    @classmethod
    def zeros(cls, grid: TorusGrid) -> "VectorField":
        return cls(tuple(ScalarField.zeros(grid) for _ in range(grid.dim)))

    def __getitem__(self, i) -> ScalarField:
        return self.components[i]

    def __add__(self, other):
        return VectorField(tuple(a + b for a, b in zip(self.components, other.components)))

    def __sub__(self, other):
        return VectorField(tuple(a - b for a, b in zip(self.components, other.components)))

    def __mul__(self, other):
        return VectorField(tuple(c * other for c in self.components))

    __rmul__ = __mul__

    def __neg__(self):
        return VectorField(tuple(-c for c in self.components))


# -- differential operators ----------------------------------------------


def gradient(f: ScalarField) -> VectorField:
    """Spectrally exact gradient of the band-limited interpolant of f."""
    ws = workspace_for(f.grid)
    return VectorField.from_arrays(f.grid, [ws.deriv(f.values, ax) for ax in range(f.grid.dim)])


def divergence(v: VectorField) -> ScalarField:
    ws = workspace_for(v.grid)
    out = np.zeros(v.grid.shape)
    for ax, comp in enumerate(v.components):
        out += ws.deriv(comp.values, ax)
    return ScalarField(v.grid, out)


def laplacian(f: ScalarField) -> ScalarField:
    ws = workspace_for(f.grid)
    return ScalarField(f.grid, ws.lap(f.values))


# -- quadrature ------------------------------------------------------------


def mean(f: ScalarField) -> float:
    return float(np.mean(f.values))


def integral(f: ScalarField) -> float:
    return float(np.sum(f.values)) * f.grid.cell_volume


def lq_norm(f: ScalarField, q: float) -> float:
    """Collocation L^q norm; trapezoid-exact for periodic smooth fields."""
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    return float((np.sum(np.abs(f.values) ** q) * f.grid.cell_volume) ** (1.0 / q))


def l2_norm(f: ScalarField) -> float:
    return float(np.sqrt(np.sum(f.values**2) * f.grid.cell_volume))


# -- dealiasing -------------------------------------------------------------

# Relative spectral-tail threshold below which a field counts as already
# dealiased.  Returning the input unchanged in that case makes dealias a
# true (bit-exact) projection despite FFT round-trip noise.
_DEALIAS_TAIL_TOL = 1e-13


def dealias(f: ScalarField) -> ScalarField:
    """Zero all modes with any |index| > n/3 (2/3 rule); idempotent."""
    ws = workspace_for(f.grid)
    spec = ws.fwd(f.values)
    total = np.linalg.norm(spec)
    tail = np.linalg.norm(spec[~ws.dealias_mask])
    if tail <= _DEALIAS_TAIL_TOL * total:
        return f
    return ScalarField(f.grid, ws.inv(ws.dealias_mask * spec))


def dealias_vector(v: VectorField) -> VectorField:
    return VectorField(tuple(dealias(c) for c in v.components))


# -- field dump format ------------------------------------------------------


def dump_field_csv(f: ScalarField, path) -> None:
    """One CSV per field: header row, then one value per line, row-major."""
    g = f.grid
    with open(path, "w") as fh:
        fh.write(f"# grid dim={g.dim} n={g.n} L={g.length!r}\n")
        for v in f.values.ravel(order="C"):
            fh.write(f"{float(v)!r}\n")


def load_field_csv(path) -> ScalarField:
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("# grid"):
            raise ValueError(f"{path}: missing field header")
        parts = dict(tok.split("=") for tok in header.split()[2:])
        grid = TorusGrid(dim=int(parts["dim"]), n=int(parts["n"]), length=float(parts["L"]))
        vals = np.array([float(line) for line in fh if line.strip()])
    return ScalarField(grid, vals.reshape(grid.shape))
