"""Periodic finite-difference calculus on the flat unit torus T^d, d in {1, 2}.

All operators are second-order centered stencils with periodic wrap. The
Laplacian follows the positive-operator sign convention (minus the sum of
second derivatives), so plane waves cos(2 pi k.x) are exact eigenvectors
with the discrete symbol eigenvalue sum_i (2 - 2 cos(2 pi k_i h)) / h^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EpslabError

__all__ = [
    "TorusGrid",
    "ScalarField",
    "VectorFieldOnX",
    "laplacian",
    "gradient",
    "divergence",
    "integrate",
    "fourier_eigenpair",
    "skew_gradient",
    "cross_scalar",
]


@dataclass(frozen=True)
class TorusGrid:
    """Uniform n^d grid on the unit torus; spacing h = 1/n, total measure 1."""

    d: int
    n: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise EpslabError(f"dimension must be 1 or 2, got {self.d}")
        if self.n < 4 or self.n % 2 != 0:
            raise EpslabError(f"n must be even and >= 4, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    def coords(self):
        """Coordinate arrays, one per axis, broadcastable to `shape`."""
        ax = np.arange(self.n) * self.h
        if self.d == 1:
            return (ax,)
        return (ax[:, None], ax[None, :])


@dataclass(frozen=True)
class ScalarField:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.shape != self.grid.shape:
            raise EpslabError(f"field shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise EpslabError("field contains non-finite values")


@dataclass(frozen=True)
class VectorFieldOnX:
    grid: TorusGrid
    components: tuple

    def __post_init__(self):
        if len(self.components) != self.grid.d:
            raise EpslabError("one component per axis required")
        comps = tuple(np.asarray(c, dtype=float) for c in self.components)
        object.__setattr__(self, "components", comps)
        for c in comps:
            if c.shape != self.grid.shape:
                raise EpslabError("component shape mismatch")


# -- raw-array kernels (used internally by the solvers) ----------------------

def lap_array(v: np.ndarray, h: float) -> np.ndarray:
    """Positive Laplacian, narrow stencil, periodic wrap."""
    out = np.zeros_like(v)
    for ax in range(v.ndim):
        out += (2.0 * v - np.roll(v, 1, axis=ax) - np.roll(v, -1, axis=ax)) / h**2
    return out


def grad_array(v: np.ndarray, h: float) -> list:
    return [(np.roll(v, -1, axis=ax) - np.roll(v, 1, axis=ax)) / (2.0 * h)
            for ax in range(v.ndim)]


def grad_norm_sq_array(v: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(v)
    for g in grad_array(v, h):
        out += g * g
    return out


def div_array(comps, h: float) -> np.ndarray:
    out = np.zeros_like(comps[0])
    for ax, c in enumerate(comps):
        out += (np.roll(c, -1, axis=ax) - np.roll(c, 1, axis=ax)) / (2.0 * h)
    return out


def integrate_array(v: np.ndarray, h: float) -> float:
    return float(v.sum() * h**v.ndim)


def fourier_symbol(grid: TorusGrid) -> np.ndarray:
    """Discrete Laplacian eigenvalues on the full FFT frequency lattice."""
    h = grid.h
    one = (2.0 - 2.0 * np.cos(2.0 * np.pi * np.fft.fftfreq(grid.n) * grid.n * h)) / h**2
    if grid.d == 1:
        return one
    return one[:, None] + one[None, :]


# -- public field operations --------------------------------------------------

def laplacian(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, lap_array(f.values, f.grid.h))


def gradient(f: ScalarField) -> VectorFieldOnX:
    return VectorFieldOnX(f.grid, tuple(grad_array(f.values, f.grid.h)))


def divergence(v: VectorFieldOnX) -> ScalarField:
    return ScalarField(v.grid, div_array(v.components, v.grid.h))


def integrate(f: ScalarField) -> float:
    return integrate_array(f.values, f.grid.h)


def fourier_eigenpair(grid: TorusGrid, k, kind: str = "cos"):
    """Plane wave and its exact discrete Laplacian eigenvalue.

    `k` is an int (d=1) or a pair of ints (d=2); at least one component must
    be nonzero and every |k_i| must stay below n/2 to be resolvable.
    Returns (ScalarField, eigenvalue) with laplacian(f) = eigenvalue * f to
    rounding.
    """
    kvec = np.atleast_1d(np.asarray(k, dtype=int))
    if kvec.size != grid.d:
        raise EpslabError(f"wave vector must have {grid.d} component(s)")
    if np.all(kvec == 0):
        raise EpslabError("zero wave vector rejected: a positive eigenvalue is required")
    if np.any(np.abs(kvec) >= grid.n // 2):
        raise EpslabError(f"|k_i| >= n/2 = {grid.n // 2} would alias")
    h = grid.h
    lam = float(np.sum((2.0 - 2.0 * np.cos(2.0 * np.pi * kvec * h)) / h**2))
    phase = sum(2.0 * np.pi * int(kvec[ax]) * grid.coords()[ax] for ax in range(grid.d))
    vals = np.cos(phase) if kind == "cos" else np.sin(phase)
    return ScalarField(grid, np.broadcast_to(vals, grid.shape).copy()), lam


def skew_gradient(s: ScalarField) -> VectorFieldOnX:
    """Rotated gradient (d2 s, -d1 s); the curl of a 2-form coefficient on T^2."""
    if s.grid.d != 2:
        raise EpslabError("skew_gradient requires d=2 (Lambda^2 TX is trivial in d=1)")
    g = grad_array(s.values, s.grid.h)
    return VectorFieldOnX(s.grid, (g[1], -g[0]))


def cross_scalar(v: VectorFieldOnX, w: VectorFieldOnX) -> ScalarField:
    """Scalar exterior product v1 w2 - v2 w1 of two vector fields on T^2."""
    if v.grid.d != 2:
        raise EpslabError("cross_scalar requires d=2")
    if v.grid != w.grid:
        raise EpslabError("fields live on different grids")
    out = v.components[0] * w.components[1] - v.components[1] * w.components[0]
    return ScalarField(v.grid, out)
