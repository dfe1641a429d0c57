"""Reproducible smooth data built from Fourier-mode recipes.

A recipe is a list of (k, amplitude, phase) triples. Densities are specified
directly (rho = 1 + sum of modes, guaranteed mean one); potentials are
recovered from densities by the periodic Poisson solve, which keeps low-mode
data admissible without hand-tuned field amplitudes.
"""

from __future__ import annotations

import numpy as np

from .errors import EpslabError, NotPositive
from .grid import ScalarField, TorusGrid
from .space_h import Potential
from .transforms import poisson_solve

__all__ = [
    "field_from_modes",
    "density_from_modes",
    "potential_from_modes",
    "random_modes",
]


def field_from_modes(grid: TorusGrid, modes) -> ScalarField:
    """sum_j amp_j cos(2 pi k_j . x + phase_j) sampled on the grid."""
    out = np.zeros(grid.shape)
    coords = grid.coords()
    for k, amp, phase in modes:
        kvec = np.atleast_1d(np.asarray(k, dtype=int))
        if kvec.size != grid.d:
            raise EpslabError(f"mode {k} has wrong dimension")
        arg = sum(2.0 * np.pi * int(kvec[ax]) * coords[ax] for ax in range(grid.d))
        out = out + float(amp) * np.cos(arg + float(phase))
    return ScalarField(grid, np.broadcast_to(out, grid.shape).copy())


def density_from_modes(grid: TorusGrid, modes) -> ScalarField:
    rho = 1.0 + field_from_modes(grid, modes).values
    if rho.min() <= 0:
        raise NotPositive("mode amplitudes too large: density not positive")
    return ScalarField(grid, rho)


def potential_from_modes(grid: TorusGrid, modes) -> Potential:
    """Admissible potential whose density is the mode recipe."""
    return poisson_solve(density_from_modes(grid, modes))


def random_modes(rng: np.random.Generator, grid: TorusGrid, count: int,
                 kmax: int, amplitude: float):
    """`count` random modes with total amplitude budget `amplitude`."""
    modes = []
    weights = rng.uniform(0.5, 1.0, size=count)
    weights *= amplitude / weights.sum()
    for w in weights:
        while True:
            k = rng.integers(-kmax, kmax + 1, size=grid.d)
            if np.any(k != 0):
                break
        modes.append((tuple(int(c) for c in k) if grid.d > 1 else int(k[0]),
                      float(w), float(rng.uniform(0.0, 2.0 * np.pi))))
    return modes
