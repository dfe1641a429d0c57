"""Maps between the three formulations and their consistency identities.

Path -> slab: convex conjugation in t per column (discrete max, two-pointer
scan). Slab -> temperature: z-differentiation with one-sided stencils at the
active-set edges. Temperature -> level sets: monotone inversion per column,
anchored at the free boundary by extrapolating to the 0 and 1 isotherms.
Level sets -> path: Poisson solve for the base potential and trapezoid
accumulation of the heights.

Level inversion and all graph evaluations use monotone cubic (PCHIP)
interpolants: monotonicity is preserved exactly, and the interpolation
kinks of a piecewise-linear inversion would otherwise dominate every
Laplacian applied to the heights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import (
    EpslabError,
    NonMonotoneTheta,
    NotNormalized,
    NotPositive,
    NotStrictlyConvexInT,
    SlabTooSmall,
    VanishingVerticalDerivative,
)
from .grid import (
    ScalarField,
    TorusGrid,
    fourier_symbol,
    grad_array,
    integrate_array,
    lap_array,
)
from .obstacle import SlabField, SlabGrid
from .space_h import PathInH, Potential, path_dt, path_dtt

__all__ = [
    "LevelSetFamily",
    "legendre_phi_to_u",
    "u_to_theta",
    "theta_level_sets",
    "flux",
    "poisson_solve",
    "theta_to_phi",
    "check_level_identities",
]


@dataclass(frozen=True)
class LevelSetFamily:
    """Graph heights h_t (and optionally fluxes rho_t) for levels t_j = j/m."""

    grid: TorusGrid
    heights: np.ndarray            # (m+1,) + grid.shape
    fluxes: np.ndarray | None = None

    def __post_init__(self):
        hts = np.asarray(self.heights, dtype=float)
        object.__setattr__(self, "heights", hts)
        if hts.shape[1:] != self.grid.shape:
            raise EpslabError("heights shape incompatible with grid")
        if np.any(np.diff(hts, axis=0) <= 0):
            raise NonMonotoneTheta("heights must increase strictly in t")
        if self.fluxes is not None:
            fl = np.asarray(self.fluxes, dtype=float)
            object.__setattr__(self, "fluxes", fl)
            if fl.shape != hts.shape:
                raise EpslabError("fluxes shape must match heights")
            h = self.grid.h
            worst = max(abs(integrate_array(fl[j], h) - 1.0)
                        for j in range(fl.shape[0]))
            if worst > 5e-2:
                raise NotNormalized(f"level flux integral off by {worst:.2e}")

    @property
    def m(self) -> int:
        return self.heights.shape[0] - 1

    def times(self) -> np.ndarray:
        return np.arange(self.m + 1) / self.m


def legendre_phi_to_u(path: PathInH, slab: SlabGrid) -> SlabField:
    """Per-column convex conjugate in t, sampled at the slab's z nodes.

    U(x, z) = max_j ( z t_j - Phi(x, t_j) + Phi(x, 0) ). The maximizing index
    is nondecreasing in z, so one monotone scan per column suffices. Exact
    for the piecewise-linear interpolant of Phi in t; requires strict
    discrete convexity in t and a slab tall enough to contain every slope.
    """
    if slab.base != path.grid:
        raise EpslabError("slab base grid must match the path grid")
    v = path.values
    if path_dtt(v, path.tau).min() <= 0.0:
        raise NotStrictlyConvexInT("discrete d2(Phi)/dt2 must be positive")
    slopes = path_dt(v, path.tau)
    if np.abs(slopes).max() >= slab.M:
        raise SlabTooSmall(
            f"slab M={slab.M} does not cover max |dPhi/dt| = {np.abs(slopes).max():.3f}")
    t = path.times()
    z = slab.z_nodes()
    U = np.empty((slab.m_z + 1,) + path.grid.shape)
    for ix in np.ndindex(path.grid.shape):
        g = v[(0,) + ix] - v[(slice(None),) + ix]   # support values, g_0 = 0
        j = 0
        col = U[(slice(None),) + ix]
        for iz, zz in enumerate(z):
            while j < path.m and zz * t[j + 1] + g[j + 1] >= zz * t[j] + g[j]:
                j += 1
            col[iz] = zz * t[j] + g[j]
    return SlabField(slab, U)


def _masked_dz(values: np.ndarray, mask: np.ndarray, k: float) -> np.ndarray:
    """Centered z-derivative with second-order one-sided stencils at the caps
    and at each column's active-set edges (never differencing across the
    free-boundary kink)."""
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - values[:-2]) / (2.0 * k)
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * k)
    out[-1] = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * k)
    base_shape = values.shape[1:]
    for ix in np.ndindex(base_shape):
        rows = np.flatnonzero(mask[(slice(None),) + ix])
        if rows.size < 3:
            continue
        j0, j1 = rows[0], rows[-1]
        col = values[(slice(None),) + ix]
        out[(j0,) + ix] = (-3.0 * col[j0] + 4.0 * col[j0 + 1] - col[j0 + 2]) / (2.0 * k)
        out[(j1,) + ix] = (3.0 * col[j1] - 4.0 * col[j1 - 1] + col[j1 - 2]) / (2.0 * k)
    return out


def u_to_theta(U: SlabField, mask: np.ndarray) -> SlabField:
    """Temperature theta = dU/dz; one-sided at caps and active-set edges so
    every stencil stays on one side of the free boundary."""
    return SlabField(U.slab, _masked_dz(U.values, mask, U.slab.k))


def _column_window(mask: np.ndarray, ix) -> tuple:
    rows = np.flatnonzero(mask[(slice(None),) + ix])
    if rows.size < 4:
        raise EpslabError(f"active set too thin in column {ix}")
    if not np.all(np.diff(rows) == 1):
        raise EpslabError(f"gapped active set in column {ix}")
    return int(rows[0]), int(rows[-1])


def theta_level_sets(theta: SlabField, mask: np.ndarray, m: int) -> LevelSetFamily:
    """Invert theta(x, .) at the levels t_j = j/m, per column.

    The sample set is extended by free-boundary anchors: linear extrapolation
    of the edge values to theta = 0 below and theta = 1 above, using the
    one-sided vertical derivative there. Monotone cubic interpolation then
    produces heights for every level in [0, 1] without clamping.
    """
    slab = theta.slab
    z = slab.z_nodes()
    k = slab.k
    tz = _masked_dz(theta.values, mask, k)
    tlev = np.arange(m + 1) / m
    heights = np.empty((m + 1,) + slab.base.shape)
    for ix in np.ndindex(slab.base.shape):
        j0, j1 = _column_window(mask, ix)
        col = theta.values[(slice(None),) + ix]
        th = col[j0:j1 + 1]
        if np.any(np.diff(th) <= 0):
            bad = j0 + int(np.argmin(np.diff(th)))
            raise NonMonotoneTheta(
                f"theta not strictly increasing at column {ix}, z-index {bad}",
                column=ix)
        d0 = tz[(j0,) + ix]
        d1 = tz[(j1,) + ix]
        if d0 <= 0 or d1 <= 0:
            raise VanishingVerticalDerivative(f"flat isotherm spacing at column {ix}")
        zlo = z[j0] - th[0] / d0
        zhi = z[j1] + (1.0 - th[-1]) / d1
        knots_t = np.concatenate([[0.0], th, [1.0]])
        knots_z = np.concatenate([[zlo], z[j0:j1 + 1], [zhi]])
        if np.any(np.diff(knots_t) <= 0):
            raise NonMonotoneTheta(f"anchors out of order at column {ix}", column=ix)
        heights[(slice(None),) + ix] = PchipInterpolator(knots_t, knots_z)(tlev)
    return LevelSetFamily(slab.base, heights)


def _flux_on_heights(theta: SlabField, heights: np.ndarray, eps: float,
                     mask: np.ndarray) -> np.ndarray:
    """eps theta_z + |grad_X theta|^2 / theta_z at (x, h(x)) for a whole
    family of heights, one monotone interpolant per column."""
    slab = theta.slab
    z = slab.z_nodes()
    k = slab.k
    h = slab.base.h
    tz = _masked_dz(theta.values, mask, k)
    gx = [
        (np.roll(theta.values, -1, axis=ax) - np.roll(theta.values, 1, axis=ax))
        / (2.0 * h)
        for ax in range(1, theta.values.ndim)
    ]
    out = np.empty_like(heights)
    for ix in np.ndindex(slab.base.shape):
        j0, j1 = _column_window(mask, ix)
        sel = (slice(j0, j1 + 1),) + ix
        zz = z[j0:j1 + 1]
        hcol = heights[(slice(None),) + ix]
        tzv = PchipInterpolator(zz, tz[sel])(hcol)
        if np.any(tzv <= 0):
            raise VanishingVerticalDerivative(f"theta_z <= 0 on the graph, column {ix}")
        gsq = np.zeros_like(hcol)
        for g in gx:
            gsq += PchipInterpolator(zz, g[sel])(hcol) ** 2
        out[(slice(None),) + ix] = eps * tzv + gsq / tzv
    return out


def flux(theta: SlabField, h_t: ScalarField, eps: float,
         mask: np.ndarray | None = None) -> ScalarField:
    """Flux density through the graph {z = h_t(x)}: the vertical derivative
    weighted by eps plus the tangential correction |grad theta|^2 / theta_z,
    interpolated in z. Positive wherever theta increases through the graph.
    """
    slab = theta.slab
    if h_t.grid != slab.base:
        raise EpslabError("height field must live on the slab base grid")
    if mask is None:
        mask = np.ones(slab.shape, dtype=bool)
    vals = _flux_on_heights(theta, h_t.values[None], eps, mask)[0]
    return ScalarField(slab.base, vals)


def poisson_solve(rho: ScalarField) -> Potential:
    """Mean-zero potential with density rho: solves Lap(phi) = 1 - rho by
    Fourier diagonalization with the exact discrete symbol."""
    grid = rho.grid
    total = integrate_array(rho.values, grid.h)
    if abs(total - 1.0) > 1e-8:
        raise NotNormalized(f"int rho = {total:.10f}, expected 1")
    if rho.values.min() <= 0:
        raise NotPositive("rho must be positive")
    sym = fourier_symbol(grid)
    rhs = np.fft.fftn(1.0 - rho.values)
    out = np.zeros_like(rhs)
    nz = sym > 0
    out[nz] = rhs[nz] / sym[nz]
    phi = np.real(np.fft.ifftn(out))
    phi -= phi.mean()
    resid = np.abs((1.0 - lap_array(phi, grid.h)) - rho.values).max()
    if resid > 1e-10:
        raise EpslabError(f"poisson residual {resid:.2e} above tolerance")
    return Potential(ScalarField(grid, phi))


def theta_to_phi(levels: LevelSetFamily, rho0: ScalarField) -> PathInH:
    """Rebuild the path from its level-set heights: the base slice solves the
    Poisson problem for rho0 and each later slice adds the trapezoid
    integral of the heights. The result is gauge-fixed by the mean-zero
    base slice. When the family carries fluxes, their consistency with the
    rebuilt densities is sanity-checked at a loose net (the sharp checks
    live in the identity report)."""
    grid = levels.grid
    if rho0.grid != grid:
        raise EpslabError("rho0 grid mismatch")
    phi0 = poisson_solve(rho0)
    m = levels.m
    tau = 1.0 / m
    values = np.empty((m + 1,) + grid.shape)
    values[0] = phi0.field.values
    acc = np.zeros(grid.shape)
    for j in range(1, m + 1):
        acc = acc + 0.5 * tau * (levels.heights[j] + levels.heights[j - 1])
        values[j] = phi0.field.values + acc
    path = PathInH(grid, values)
    if levels.fluxes is not None:
        k_guess = np.diff(levels.heights, axis=0).max()
        net = 50.0 * (grid.h**2 + tau**2 + max(k_guess, tau))
        dens = np.stack([1.0 - lap_array(values[j], grid.h) for j in range(m + 1)])
        worst = np.abs(levels.fluxes - dens).max()
        if worst > net:
            raise EpslabError(
                f"level fluxes inconsistent with rebuilt densities: {worst:.2e}")
    return path


def check_level_identities(U: SlabField, theta: SlabField, levels: LevelSetFamily,
                           path: PathInH, eps: float, mask: np.ndarray,
                           window: tuple = (0.1, 0.9)) -> dict:
    """Sup-norm residuals, over levels inside `window`, of the graph
    identities tying the three formulations together:

      chain      d_i theta + theta_z d_i h = 0        on each graph
      spacing    theta_z * dh/dt = 1
      inverse    U_zz * Phi_tt = 1
      flux law   d(rho_t)/dt + Lap_X h_t = 0

    All four vanish at second order for smooth solutions away from the free
    boundary; the window keeps the evaluation off the first and last levels
    where one-sided stencils reduce the order.
    """
    slab = U.slab
    grid = slab.base
    z = slab.z_nodes()
    k = slab.k
    hh = grid.h
    tau = 1.0 / levels.m
    tlev = levels.times()
    sel = (tlev >= window[0]) & (tlev <= window[1])
    hts = levels.heights

    tz = _masked_dz(theta.values, mask, k)
    uzz = np.empty_like(U.values)
    uzz[1:-1] = (U.values[2:] - 2.0 * U.values[1:-1] + U.values[:-2]) / k**2
    uzz[0] = uzz[1]
    uzz[-1] = uzz[-2]
    gx = [
        (np.roll(theta.values, -1, axis=ax) - np.roll(theta.values, 1, axis=ax))
        / (2.0 * hh)
        for ax in range(1, theta.values.ndim)
    ]

    ptt = path_dtt(path.values, tau)          # interior t-slices of the path
    dh_dt = path_dt(hts, tau)

    nlev = hts.shape[0]
    hts_grad = [np.stack([grad_array(hts[j], hh)[ax] for j in range(nlev)])
                for ax in range(grid.d)]

    res_chain = 0.0
    res_spacing = 0.0
    res_inverse = 0.0
    for ix in np.ndindex(grid.shape):
        j0, j1 = _column_window(mask, ix)
        zz = z[j0:j1 + 1]
        s = (slice(j0, j1 + 1),) + ix
        hcol = hts[(slice(None),) + ix]
        tzv = PchipInterpolator(zz, tz[s])(hcol)
        uzzv = PchipInterpolator(zz, uzz[s])(hcol)
        for ax in range(grid.d):
            txv = PchipInterpolator(zz, gx[ax][s])(hcol)
            hg = hts_grad[ax][(slice(None),) + ix]
            res_chain = max(res_chain, np.abs((txv + tzv * hg)[sel]).max())
        res_spacing = max(res_spacing,
                          np.abs((tzv * dh_dt[(slice(None),) + ix] - 1.0)[sel]).max())
        interior = sel[1:-1]
        col_ptt = ptt[(slice(None),) + ix]
        res_inverse = max(res_inverse,
                          np.abs((uzzv[1:-1] * col_ptt - 1.0)[interior]).max())

    rho = _flux_on_heights(theta, hts, eps, mask)
    drho = (rho[2:] - rho[:-2]) / (2.0 * tau)
    lap_h = np.stack([lap_array(hts[j], hh) for j in range(1, nlev - 1)])
    res_law = float(np.abs((drho + lap_h)[sel[1:-1]]).max())

    return {
        "chain": float(res_chain),
        "spacing": float(res_spacing),
        "inverse": float(res_inverse),
        "flux_law": res_law,
    }
