"""The Riemannian space of admissible potentials on the torus.

A potential phi is admissible when the density 1 - Lap(phi) stays positive;
the squared norm of a tangent vector a at phi is the integral of
a^2 (1 - Lap phi). Paths carry the particle action with a linear potential
term, whose flow equation is

    phi_tt = (|grad phi_t|^2 + eps) / (1 - Lap phi).

Time stencils on paths are centered in the interior and one-sided
second-order at the endpoints, giving uniform O(m^-2) accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AdmissibilityLost, EpslabError
from .grid import (
    ScalarField,
    TorusGrid,
    VectorFieldOnX,
    cross_scalar,
    fourier_eigenpair,
    grad_array,
    grad_norm_sq_array,
    integrate_array,
    lap_array,
    skew_gradient,
)

__all__ = [
    "Potential",
    "PathInH",
    "TrajectoryState",
    "metric_norm_sq",
    "action",
    "el_residual",
    "covariant_derivative",
    "forward_flow",
    "curvature_vector",
    "sectional_curvature",
    "conserved_quantity",
    "check_vector_identities",
]

DEFAULT_MARGIN = 1e-8


@dataclass(frozen=True)
class Potential:
    """An admissible potential: min(1 - Lap phi) >= margin > 0."""

    field: ScalarField
    margin: float = DEFAULT_MARGIN

    def __post_init__(self):
        if self.margin <= 0:
            raise EpslabError("margin must be positive")
        if self.density_min() < self.margin:
            raise AdmissibilityLost(
                f"potential inadmissible: min density {self.density_min():.3e} "
                f"< margin {self.margin:.1e}")

    @property
    def grid(self) -> TorusGrid:
        return self.field.grid

    def density(self) -> np.ndarray:
        return 1.0 - lap_array(self.field.values, self.grid.h)

    def density_min(self) -> float:
        return float(self.density().min())


@dataclass(frozen=True)
class PathInH:
    """m+1 admissible slices Phi_j at t_j = j/m; slices 0 and m are the endpoints."""

    grid: TorusGrid
    values: np.ndarray  # (m+1,) + grid.shape
    margin: float = DEFAULT_MARGIN

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 + self.grid.d or v.shape[1:] != self.grid.shape:
            raise EpslabError(f"path shape {v.shape} incompatible with grid")
        if v.shape[0] < 3:
            raise EpslabError("a path needs at least two time intervals")
        dens = slice_densities(v, self.grid.h)
        if dens.min() < self.margin:
            raise AdmissibilityLost(
                f"path slice leaves the admissible cone (min density {dens.min():.3e})")

    @property
    def m(self) -> int:
        return self.values.shape[0] - 1

    @property
    def tau(self) -> float:
        return 1.0 / self.m

    def times(self) -> np.ndarray:
        return np.arange(self.m + 1) * self.tau


@dataclass(frozen=True)
class TrajectoryState:
    phi: Potential
    phi_dot: ScalarField
    t: float


# -- time stencils -------------------------------------------------------------

def path_dt(values: np.ndarray, tau: float) -> np.ndarray:
    """First t-derivative of a (m+1, ...) family; one-sided second order at the ends."""
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - values[:-2]) / (2.0 * tau)
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * tau)
    out[-1] = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * tau)
    return out


def path_dtt(values: np.ndarray, tau: float) -> np.ndarray:
    """Second t-derivative on interior slices only: shape (m-1, ...)."""
    return (values[2:] - 2.0 * values[1:-1] + values[:-2]) / tau**2


def slice_densities(values: np.ndarray, h: float) -> np.ndarray:
    return np.stack([1.0 - lap_array(values[j], h) for j in range(values.shape[0])])


# -- metric, action, flow ------------------------------------------------------

def metric_norm_sq(phi: Potential, alpha: ScalarField) -> float:
    """Squared metric norm of the tangent vector alpha at phi."""
    if alpha.grid != phi.grid:
        raise EpslabError("tangent vector on a different grid")
    return integrate_array(alpha.values**2 * phi.density(), phi.grid.h)


def action(path: PathInH, eps: float) -> float:
    """Trapezoid-in-t of  1/2 ||phi_t||^2_phi + eps * int(phi)."""
    h = path.grid.h
    vel = path_dt(path.values, path.tau)
    dens = slice_densities(path.values, h)
    kin = 0.5 * np.array([integrate_array(vel[j] ** 2 * dens[j], h)
                          for j in range(path.m + 1)])
    pot = eps * np.array([integrate_array(path.values[j], h) for j in range(path.m + 1)])
    return float(np.trapezoid(kin + pot, dx=path.tau))


def el_residual(path: PathInH, eps: float) -> np.ndarray:
    """Flow-equation residual  phi_tt (1 - Lap phi) - |grad phi_t|^2 - eps
    on interior slices; zero iff the discrete flow equation holds.
    Returns an array of shape (m-1,) + grid.shape.
    """
    h = path.grid.h
    v = path.values
    ptt = path_dtt(v, path.tau)
    pt = (v[2:] - v[:-2]) / (2.0 * path.tau)
    dens = slice_densities(v, h)[1:-1]
    gsq = np.stack([grad_norm_sq_array(pt[j], h) for j in range(path.m - 1)])
    return ptt * dens - gsq - eps


def covariant_derivative(path: PathInH, psi: np.ndarray) -> np.ndarray:
    """Levi-Civita derivative D_t of a family psi along the path.

    psi has the same (m+1, ...) shape as the path values. Each slice gets
    dpsi/dt + (W_t, grad psi) with W_t = -grad(phi_t) / (1 - Lap phi).
    """
    v = path.values
    psi = np.asarray(psi, dtype=float)
    if psi.shape != v.shape:
        raise EpslabError("family shape must match the path")
    h = path.grid.h
    vel = path_dt(v, path.tau)
    dpsi = path_dt(psi, path.tau)
    out = np.empty_like(psi)
    for j in range(path.m + 1):
        dens = 1.0 - lap_array(v[j], h)
        w = [-g / dens for g in grad_array(vel[j], h)]
        adv = np.zeros_like(psi[j])
        for wc, gc in zip(w, grad_array(psi[j], h)):
            adv += wc * gc
        out[j] = dpsi[j] + adv
    return out


def flow_acceleration(phi_vals: np.ndarray, vel_vals: np.ndarray, eps: float,
                      h: float) -> np.ndarray:
    return (grad_norm_sq_array(vel_vals, h) + eps) / (1.0 - lap_array(phi_vals, h))


def forward_flow(init: TrajectoryState, eps: float, dt: float, steps: int,
                 margin: float = DEFAULT_MARGIN) -> list:
    """Classical RK4 on (phi, phi_dot); aborts when admissibility is lost.

    The underlying flow is the initial value problem for an equation that is
    elliptic in space-time, so generic perturbations grow like
    exp(sqrt(eps * lambda) t); expect admissibility loss beyond short
    horizons on fine grids.
    """
    if dt <= 0:
        raise EpslabError("dt must be positive")
    grid = init.phi.grid
    h = grid.h
    phi = init.phi.field.values.copy()
    vel = init.phi_dot.values.copy()
    states = [TrajectoryState(Potential(ScalarField(grid, phi.copy()), margin),
                              ScalarField(grid, vel.copy()), init.t)]
    t = init.t
    for step in range(1, steps + 1):
        k1p, k1v = vel, flow_acceleration(phi, vel, eps, h)
        p2, v2 = phi + 0.5 * dt * k1p, vel + 0.5 * dt * k1v
        k2p, k2v = v2, flow_acceleration(p2, v2, eps, h)
        p3, v3 = phi + 0.5 * dt * k2p, vel + 0.5 * dt * k2v
        k3p, k3v = v3, flow_acceleration(p3, v3, eps, h)
        p4, v4 = phi + dt * k3p, vel + dt * k3v
        k4p, k4v = v4, flow_acceleration(p4, v4, eps, h)
        phi = phi + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        vel = vel + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        t += dt
        dens_min = 1.0 - lap_array(phi, h).max()
        if not np.isfinite(dens_min) or dens_min < margin:
            raise AdmissibilityLost(
                f"admissibility lost at step {step} (t={t:.4f}, "
                f"min density {dens_min:.3e})", step=step)
        states.append(TrajectoryState(Potential(ScalarField(grid, phi.copy()), margin),
                                     ScalarField(grid, vel.copy()), t))
    return states


# -- curvature -----------------------------------------------------------------

def curvature_vector(phi: Potential, alpha: ScalarField,
                     beta: ScalarField) -> VectorFieldOnX:
    """The vector field implementing the curvature operator on T^2:
    g * skew_gradient(g * (grad alpha x grad beta)) with g = 1/(1 - Lap phi).
    """
    grid = phi.grid
    if grid.d != 2:
        raise EpslabError("curvature requires d=2")
    g = 1.0 / phi.density()
    cross = cross_scalar(
        VectorFieldOnX(grid, tuple(grad_array(alpha.values, grid.h))),
        VectorFieldOnX(grid, tuple(grad_array(beta.values, grid.h))))
    rot = skew_gradient(ScalarField(grid, g * cross.values))
    return VectorFieldOnX(grid, tuple(g * c for c in rot.components))


def sectional_curvature(phi: Potential, alpha: ScalarField,
                        beta: ScalarField) -> float:
    """Non-positive by construction: minus the weighted square of the
    exterior product of the two gradients."""
    grid = phi.grid
    if grid.d != 2:
        raise EpslabError("curvature requires d=2")
    g = 1.0 / phi.density()
    cross = cross_scalar(
        VectorFieldOnX(grid, tuple(grad_array(alpha.values, grid.h))),
        VectorFieldOnX(grid, tuple(grad_array(beta.values, grid.h))))
    return -integrate_array(g * cross.values**2, grid.h)


# -- conserved quantities --------------------------------------------------------

def conserved_quantity(phi: Potential, phi_dot: ScalarField, k, eps: float) -> float:
    """int exp(sqrt(lambda_k / eps) phi_dot) f_k (1 - Lap phi), with the exact
    discrete eigenpair (f_k, lambda_k); invariant along the flow equation."""
    if eps <= 0:
        raise EpslabError("eps must be positive")
    f, lam = fourier_eigenpair(phi.grid, k)
    c = np.sqrt(lam / eps)
    integrand = np.exp(c * phi_dot.values) * f.values * phi.density()
    return integrate_array(integrand, phi.grid.h)


# -- first-order vector calculus identities -------------------------------------

def check_vector_identities(v: VectorFieldOnX, w: VectorFieldOnX,
                            f: ScalarField):
    """Sup-norm residuals of the two curl identities used by the curvature
    computation, under the discrete operators:

        curl(v x w)     = [w, v] + (div w) v - (div v) w
        curl(f (v x w)) = f curl(v x w) + (w, grad f) v - (v, grad f) w

    (The orientation pairing fixed by our realizations of the exterior
    product v1 w2 - v2 w1 and of curl as the rotated gradient puts the
    arguments in this order; swapping them flips every sign.) Mixed product
    stencils commute only approximately, so both residuals are small for
    smooth inputs and vanish identically for v = w or constant data.
    """
    grid = v.grid
    if grid.d != 2:
        raise EpslabError("identities are about Lambda^2 T(T^2)")
    h = grid.h

    def grad(u):
        return grad_array(u, h)

    def div(comps):
        return sum((np.roll(c, -1, axis=ax) - np.roll(c, 1, axis=ax)) / (2 * h)
                   for ax, c in enumerate(comps))

    def curl_scal(s):
        g = grad(s)
        return (g[1], -g[0])

    def lie(a, b):
        # [a, b] = (a . grad) b - (b . grad) a, componentwise
        out = []
        for comp in range(2):
            gb = grad(b[comp])
            ga = grad(a[comp])
            out.append(a[0] * gb[0] + a[1] * gb[1] - b[0] * ga[0] - b[1] * ga[1])
        return out

    vv, ww = list(v.components), list(w.components)
    cross = vv[0] * ww[1] - vv[1] * ww[0]
    lhs1 = curl_scal(cross)
    br = lie(ww, vv)
    dv, dw = div(vv), div(ww)
    res1 = max(np.abs(lhs1[c] - (br[c] + dw * vv[c] - dv * ww[c])).max()
               for c in range(2))

    lhs2 = curl_scal(f.values * cross)
    gf = grad(f.values)
    vgf = vv[0] * gf[0] + vv[1] * gf[1]
    wgf = ww[0] * gf[0] + ww[1] * gf[1]
    res2 = max(np.abs(lhs2[c] - (f.values * lhs1[c] + wgf * vv[c] - vgf * ww[c])).max()
               for c in range(2))
    return float(res1), float(res2)
