"""
Periodic lattice on the torus [0, 2*pi)^d.

Fourier convention
------------------
A lattice function is written as f(x) = sum_k fhat_k exp(i k.x) over integer
frequencies k in {-N/2, ..., N/2-1}^d, with

    fhat_k = (2 pi)^-d h^d sum_x f(x) exp(-i k.x),

so that fhat = fftn(f) / N^d.  A convolution kernel K acts by

    (K * f)(x) = h^d sum_y K(x - y) f(y),

which multiplies fhat_k by the *multiplier* h^d fftn(K)_k.  The lattice delta
(value h^-d at the origin) has multiplier 1.
"""
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

_MAX_SITES = 2 ** 24


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid with N points per axis on the d-torus of period 2 pi."""

    d: int
    N: int

    def __post_init__(self):
        if not 1 <= self.d <= 6:
            raise GridError("d must be in 1..6, got %r" % (self.d,))
        if self.N < 8 or self.N & (self.N - 1):
            raise GridError("N must be a power of two >= 8, got %r" % (self.N,))
        if self.N ** self.d > _MAX_SITES:
            raise GridError("N^d = %d exceeds the memory guard 2^24" % self.N ** self.d)

    @property
    def h(self):
        return 2 * np.pi / self.N

    @property
    def cell_volume(self):
        return self.h ** self.d

    @property
    def shape(self):
        return (self.N,) * self.d

    @property
    def size(self):
        return self.N ** self.d

    def coords(self):
        """Lattice coordinates, one array of shape `shape` per axis."""
        x = np.arange(self.N) * self.h
        return np.meshgrid(*([x] * self.d), indexing="ij")

    def displacement(self):
        """Minimal-image displacement of each site from the origin, in (-pi, pi]."""
        j = np.arange(self.N)
        j = np.where(j > self.N // 2, j - self.N, j)
        u = j * self.h
        return np.meshgrid(*([u] * self.d), indexing="ij")

    def frequencies(self):
        """Integer frequency vectors; the Nyquist index carries -N/2."""
        k = sfft.fftfreq(self.N, 1.0 / self.N)
        return np.meshgrid(*([k] * self.d), indexing="ij")

    def kabs(self):
        return np.sqrt(sum(k * k for k in self.frequencies()))

    def refined(self, M):
        """Grid with the same spacing on a box M times longer per axis."""
        return _BoxGrid(self.d, self.N * M, self.h)


@dataclass(frozen=True)
class _BoxGrid:
    # oversampled box used to build kernels before folding; not a torus grid
    d: int
    N: int
    h: float

    @property
    def shape(self):
        return (self.N,) * self.d

    def kabs(self):
        # physical frequencies n / M on the period 2 pi M box
        k = sfft.fftfreq(self.N, self.h / (2 * np.pi))
        K = np.meshgrid(*([k] * self.d), indexing="ij")
        return np.sqrt(sum(q * q for q in K))

    def radius(self):
        j = np.arange(self.N)
        j = np.where(j >= self.N // 2, j - self.N, j) * self.h
        X = np.meshgrid(*([j] * self.d), indexing="ij")
        return np.sqrt(sum(q * q for q in X)), X


class Field:
    """Real lattice function attached to a grid."""

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            values = values.reshape(grid.shape)
        if not np.all(np.isfinite(values)):
            raise GridError("field contains non-finite values")
        self.grid = grid
        self.values = values

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __repr__(self):
        return "Field(d=%d, N=%d)" % (self.grid.d, self.grid.N)


def _values(f, grid=None):
    if isinstance(f, Field):
        if grid is not None and f.grid != grid:
            raise GridError("incompatible grids")
        return f.values
    return np.asarray(f, dtype=float)


def fourier(f, grid):
    """Coefficients fhat_k of a lattice function."""
    v = _values(f, grid)
    axes = tuple(range(-grid.d, 0))
    return sfft.fftn(v, axes=axes) / grid.size


def from_fourier(fhat, grid):
    axes = tuple(range(-grid.d, 0))
    return sfft.ifftn(fhat, axes=axes).real * grid.size


def multiplier_of(kernel_values, grid):
    """Multiplier h^d fftn(K) of a kernel given by position values."""
    axes = tuple(range(-grid.d, 0))
    return sfft.fftn(kernel_values, axes=axes) * grid.cell_volume


def kernel_from_multiplier(mult, grid):
    axes = tuple(range(-grid.d, 0))
    return sfft.ifftn(mult, axes=axes).real / grid.cell_volume


def _reflect_index(grid):
    idx = (-np.arange(grid.N)) % grid.N
    return np.ix_(*([idx] * grid.d))


def check_even(table, grid, rtol=1e-12):
    flipped = table[_reflect_index(grid)]
    scale = np.max(np.abs(table)) if table.size else 0.0
    if np.max(np.abs(table - flipped), initial=0.0) > rtol * max(scale, 1e-300):
        raise GridError("multiplier not real-symmetric")


def apply_multiplier(f, symbol, grid=None):
    """Multiply the Fourier coefficients of f by symbol(k).

    Parameters
    ----------
    f : Field or ndarray
        Input; the trailing d axes are the lattice axes.
    symbol : callable or ndarray
        Either a function of the d integer frequency arrays or a table of
        shape ``grid.shape``.  It must be even in k.
    """
    if grid is None:
        grid = f.grid
    table = symbol(*grid.frequencies()) if callable(symbol) else np.asarray(symbol)
    table = np.broadcast_to(np.asarray(table, dtype=float), grid.shape)
    check_even(table, grid)
    v = _values(f, grid)
    axes = tuple(range(-grid.d, 0))
    out = sfft.ifftn(sfft.fftn(v, axes=axes) * table, axes=axes).real
    return Field(grid, out) if isinstance(f, Field) else out


def circ_convolve(f, g):
    """Torus convolution of a field with a PeriodizedKernel."""
    if isinstance(f, Field) and f.grid != g.grid:
        raise GridError("incompatible grids")
    out = g.apply(_values(f))
    return Field(g.grid, out) if isinstance(f, Field) else out


def sample_white_noise(grid, seed):
    """Centered Gaussian lattice noise with per-site variance h^-d."""
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal(grid.shape) * grid.cell_volume ** -0.5
    return Field(grid, xi)


def pairing(xi, phi, grid):
    """<xi, phi> = h^d sum_x xi(x) phi(x)."""
    return grid.cell_volume * np.sum(_values(xi, grid) * _values(phi, grid), axis=tuple(range(-grid.d, 0)))
