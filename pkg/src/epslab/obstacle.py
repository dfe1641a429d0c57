"""Variational-inequality form of the slab problem, solved by projected SOR.

The unknown U lives on X x [-M, M], is pinned to 0 at the bottom cap and to
the obstacle at the top cap, and satisfies the complementarity system

    U >= L,    G := rho0 - (eps U_zz - Lap_X U) >= 0,    min(G, U - L) = 0,

the first-order conditions of minimizing

    E_M(U) = int 1/2 |grad_X U|^2 + (eps/2) U_z^2 + rho0 U

over {U >= L}. Sweeps use checkerboard ordering (every neighbour of a node
lies in the other colour class), so the projected updates vectorize while
keeping the Gauss-Seidel energy-descent property for any relaxation factor
in (0, 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    EpslabError,
    FreeBoundaryTouchesSlab,
    NonContiguousActiveSet,
    NotConverged,
    NotNormalized,
    NotPositive,
)
from .grid import ScalarField, TorusGrid, grad_array, integrate_array, lap_array
from .space_h import Potential

__all__ = [
    "SlabGrid",
    "SlabField",
    "ObstacleProblem",
    "PsorInfo",
    "obstacle_L",
    "energy_EM",
    "optimal_omega",
    "solve_psor",
    "active_set",
    "family_sweep",
]


@dataclass(frozen=True)
class SlabGrid:
    """Tensor grid on X x [-M, M]; z spacing k = 2M / m_z, z=0 is a node."""

    base: TorusGrid
    M: float
    m_z: int

    def __post_init__(self):
        if self.M <= 0:
            raise EpslabError("slab half-height must be positive")
        if self.m_z < 8 or self.m_z % 2 != 0:
            raise EpslabError("m_z must be even and >= 8")

    @property
    def k(self) -> float:
        return 2.0 * self.M / self.m_z

    @property
    def shape(self) -> tuple:
        return (self.m_z + 1,) + self.base.shape

    def z_nodes(self) -> np.ndarray:
        return -self.M + np.arange(self.m_z + 1) * self.k


@dataclass(frozen=True)
class SlabField:
    slab: SlabGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.shape != self.slab.shape:
            raise EpslabError(f"slab field shape {v.shape} != {self.slab.shape}")
        if not np.all(np.isfinite(v)):
            raise EpslabError("slab field contains non-finite values")


@dataclass(frozen=True)
class ObstacleProblem:
    L: SlabField
    rho0: ScalarField
    eps: float

    def __post_init__(self):
        if self.eps <= 0:
            raise EpslabError("eps must be positive")
        if self.rho0.grid != self.L.slab.base:
            raise EpslabError("rho0 must live on the slab's base grid")
        h = self.rho0.grid.h
        total = integrate_array(self.rho0.values, h)
        if abs(total - 1.0) > 1e-10:
            raise NotNormalized(f"int rho0 = {total:.12f}, expected 1")
        if self.rho0.values.min() <= 0:
            raise NotPositive("rho0 must be strictly positive")
        if np.abs(self.L.values[0]).max() > 0:
            raise EpslabError("obstacle must vanish at the bottom cap (M too small?)")


@dataclass
class PsorInfo:
    sweeps: int
    residual: float
    omega: float
    energies: np.ndarray | None = None


def obstacle_L(phi0: Potential, phi1: Potential, slab: SlabGrid) -> SlabField:
    """L(x, z) = max(phi0 - phi1 + z, 0); convex and nondecreasing in z."""
    if phi0.grid != slab.base or phi1.grid != slab.base:
        raise EpslabError("potentials must live on the slab's base grid")
    z = slab.z_nodes().reshape((-1,) + (1,) * slab.base.d)
    diff = phi0.field.values - phi1.field.values
    return SlabField(slab, np.maximum(diff[None] + z, 0.0))


def slab_dz(values: np.ndarray, k: float) -> np.ndarray:
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - values[:-2]) / (2.0 * k)
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * k)
    out[-1] = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * k)
    return out


def energy_EM(U: SlabField, p: ObstacleProblem) -> float:
    """int 1/2 |grad_X U|^2 + (eps/2) U_z^2 + rho0 U over the slab.

    The z-term carries eps/2 and the source term enters with a plus sign so
    that the constrained minimizer satisfies the complementarity system
    above; trapezoid quadrature in z.
    """
    slab = U.slab
    h = slab.base.h
    v = U.values
    gsq = np.zeros_like(v)
    for ax in range(1, v.ndim):
        g = (np.roll(v, -1, axis=ax) - np.roll(v, 1, axis=ax)) / (2.0 * h)
        gsq += g * g
    uz = slab_dz(v, slab.k)
    dens = 0.5 * gsq + 0.5 * p.eps * uz**2 + p.rho0.values[None] * v
    per_x = np.trapezoid(dens, dx=slab.k, axis=0)
    return integrate_array(per_x, h)


def slab_operator(values: np.ndarray, eps: float, k: float, h: float) -> np.ndarray:
    """(eps d_zz - Lap_X) U on interior z-rows."""
    out = eps * (values[2:] - 2.0 * values[1:-1] + values[:-2]) / k**2
    for ax in range(1, values.ndim):
        out -= (2.0 * values[1:-1] - np.roll(values[1:-1], 1, axis=ax)
                - np.roll(values[1:-1], -1, axis=ax)) / h**2
    return out


def complementarity_residual(U: np.ndarray, L: np.ndarray, rho0: np.ndarray,
                             eps: float, k: float, h: float):
    G = rho0[None] - slab_operator(U, eps, k, h)
    comp = np.abs(np.minimum(G, (U - L)[1:-1]))
    return float(comp.max()), float(G.min())


def optimal_omega(eps: float, k: float, h: float, m_z: int, d: int = 1) -> float:
    """Near-optimal SOR factor from the unconstrained five/seven-point model.
    The worst Jacobi mode is constant along the periodic axes, so only the
    Dirichlet z-direction damps it."""
    a = 2.0 * eps / k**2 + 2.0 * d / h**2
    mu = (2.0 * (eps / k**2) * np.cos(np.pi / m_z) + 2.0 * d / h**2) / a
    return float(2.0 / (1.0 + np.sqrt(max(1e-15, 1.0 - mu**2))))


def solve_psor(p: ObstacleProblem, omega: float | str = 1.5, tol: float = 1e-10,
               max_sweeps: int = 200_000, record_energy: bool = False):
    """Projected SOR for the slab variational inequality.

    Returns (U, PsorInfo). Convergence is declared when the complementarity
    residual |min(G, U - L)| and the violation of G >= 0 both drop below
    `tol` at every interior node. Raises FreeBoundaryTouchesSlab when the
    active set comes within two nodes of a cap, and NotConverged on sweep
    exhaustion. Note the attainable floor: rounding in the stencil limits
    the residual to roughly |U| * eps_machine / k^2.
    """
    slab = p.L.slab
    k = slab.k
    h = slab.base.h
    d = slab.base.d
    m_z = slab.m_z
    L = p.L.values
    rho0 = p.rho0.values
    if not (isinstance(omega, str) and omega == "auto") and not 0.0 < omega < 2.0:
        raise EpslabError("relaxation factor must lie in (0, 2)")
    om = optimal_omega(p.eps, k, h, m_z, d) if omega == "auto" else float(omega)

    U = L.copy()
    U[0] = 0.0
    U[-1] = L[-1]
    a = 2.0 * p.eps / k**2 + 2.0 * d / h**2
    idx = np.indices(slab.shape).sum(axis=0)
    interior = np.zeros(slab.shape, dtype=bool)
    interior[1:-1] = True
    colors = [interior & (idx % 2 == 0), interior & (idx % 2 == 1)]

    def gs_target(U):
        nb = np.zeros_like(U)
        for ax in range(1, U.ndim):
            nb += (np.roll(U, 1, axis=ax) + np.roll(U, -1, axis=ax)) / h**2
        nb[1:-1] += (p.eps / k**2) * (U[2:] + U[:-2])
        return (nb - rho0[None]) / a

    energies = [] if record_energy else None
    info = PsorInfo(sweeps=0, residual=np.inf, omega=om)
    for sweep in range(1, max_sweeps + 1):
        for mask in colors:
            cand = np.maximum(L, U + om * (gs_target(U) - U))
            U[mask] = cand[mask]
        if record_energy:
            energies.append(energy_EM(SlabField(slab, U), p))
        if sweep % 20 == 0 or sweep == max_sweeps:
            comp, gmin = complementarity_residual(U, L, rho0, p.eps, k, h)
            if comp <= tol and gmin >= -tol:
                info.sweeps = sweep
                info.residual = comp
                break
    else:
        comp, gmin = complementarity_residual(U, L, rho0, p.eps, k, h)
        raise NotConverged(f"PSOR: residual {comp:.3e} after {max_sweeps} sweeps",
                           sweeps=max_sweeps, residual=comp)

    active = (U - L) > max(10.0 * tol, 1e-12)
    if active[:3].any() or active[-3:].any():
        raise FreeBoundaryTouchesSlab("active set within two nodes of a cap")
    if record_energy:
        info.energies = np.asarray(energies[:info.sweeps])
    return SlabField(slab, U), info


def active_set(U: SlabField, L: SlabField, tol: float):
    """Active-set mask and the free-boundary graphs.

    Per column, H0 is the (linearly interpolated) height where U - L first
    exceeds tol from below and H1 where it last does from above; empty
    columns report the kink height of the obstacle for both. A column whose
    active set has gaps raises NonContiguousActiveSet.
    """
    slab = U.slab
    z = slab.z_nodes()
    dv = U.values - L.values
    if dv.min() < -tol:
        raise EpslabError("U < L beyond tolerance; not an admissible pair")
    mask = dv > tol
    base_shape = slab.base.shape
    H0 = np.empty(base_shape)
    H1 = np.empty(base_shape)
    for ix in np.ndindex(base_shape):
        col = dv[(slice(None),) + ix]
        rows = np.flatnonzero(mask[(slice(None),) + ix])
        if rows.size == 0:
            # obstacle kink: L = max(D + z, 0) => D = L_top - M
            D = L.values[(-1,) + ix] - slab.M
            H0[ix] = H1[ix] = -D
            continue
        if not np.all(np.diff(rows) == 1):
            raise NonContiguousActiveSet(f"column {ix} has a gapped active set")
        j0, j1 = rows[0], rows[-1]
        if j0 == 0:
            H0[ix] = z[0]
        else:
            f0, f1 = col[j0 - 1] - tol, col[j0] - tol
            H0[ix] = z[j0 - 1] + (0.0 - f0) / (f1 - f0) * slab.k
        if j1 == slab.m_z:
            H1[ix] = z[-1]
        else:
            f0, f1 = col[j1] - tol, col[j1 + 1] - tol
            H1[ix] = z[j1] + (0.0 - f0) / (f1 - f0) * slab.k
    grid = slab.base
    return mask, ScalarField(grid, H0), ScalarField(grid, H1)


def family_sweep(lam: ScalarField, rho: ScalarField, z_list, tol: float = 1e-10,
                 omega: float = 1.7, max_sweeps: int = 200_000):
    """Constrained Poisson family on X: for each level z minimize
    int 1/2 |grad u|^2 + rho u over {u >= max(lam, z)} by projected SOR.

    Returns a list of (u_z, active-mask) in the order of z_list plus an array
    of consecutive-level difference quotients |u_{z'} - u_z| / (z' - z), a
    smoothness diagnostic with no pass/fail attached.
    """
    grid = lam.grid
    if rho.grid != grid:
        raise EpslabError("lam and rho must share a grid")
    if rho.values.min() <= 0:
        raise NotPositive("rho must be positive for the constraint to bind")
    h = grid.h
    d = grid.d
    a = 2.0 * d / h**2
    idx = np.indices(grid.shape).sum(axis=0)
    colors = [(idx % 2 == 0), (idx % 2 == 1)]

    results = []
    prev = None
    quotients = []
    for z in z_list:
        obst = np.maximum(lam.values, float(z))
        u = obst.copy() if prev is None else np.maximum(prev, obst)
        for sweep in range(1, max_sweeps + 1):
            for mask in colors:
                nb = np.zeros_like(u)
                for ax in range(d):
                    nb += (np.roll(u, 1, axis=ax) + np.roll(u, -1, axis=ax)) / h**2
                cand = np.maximum(obst, u + omega * ((nb - rho.values) / a - u))
                u[mask] = cand[mask]
            if sweep % 10 == 0:
                G = lap_array(u, h) + rho.values
                comp = np.abs(np.minimum(G, u - obst)).max()
                if comp <= tol and G.min() >= -tol:
                    break
        else:
            raise NotConverged(f"family level z={z}: no convergence")
        if prev is not None:
            dz = float(z) - float(prev_z)
            if dz != 0:
                quotients.append(np.abs(u - prev).max() / abs(dz))
        results.append((ScalarField(grid, u.copy()), u - obst > tol))
        prev, prev_z = u.copy(), z
    return results, np.asarray(quotients)
