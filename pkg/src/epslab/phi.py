"""Dirichlet solver for the time-convex potential equation on X x [0,1].

The operator is

    q(Phi) = Phi_tt (1 - Lap Phi) - |grad Phi_t|^2,

a Monge-Ampere-type expression (in d=1 it is the 2x2 Hessian determinant
with respect to (t, x) after adding 1 to the xx entry). The boundary value
problem q(Phi) = eps with endpoint slices phi0, phi1 is solved by a
continuity method in the boundary data, seeded at the exactly solvable
instance Phi = (eps/2) t (t-1), with a damped Newton corrector at every
continuation step. The linearized systems are assembled sparse and solved
directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EpslabError, NewtonDiverged, StepTooSmall
from .grid import ScalarField, TorusGrid, grad_array, lap_array
from .space_h import PathInH, Potential, action, path_dtt, slice_densities

__all__ = [
    "NewtonOptions",
    "PhiProblem",
    "q_operator",
    "q_linearization",
    "solve_dirichlet",
    "lorentz_q",
    "hessian_quadratic_min",
    "convexity_report",
]

MIN_CONTINUATION_STEP = 2.0**-20


@dataclass(frozen=True)
class NewtonOptions:
    tol: float = 1e-9          # sup-norm target for q(Phi) - eps
    max_iter: int = 40
    backtrack: float = 0.5
    margin: float = 1e-8


@dataclass(frozen=True)
class PhiProblem:
    phi0: Potential
    phi1: Potential
    eps: float
    m: int
    newton: NewtonOptions = field(default_factory=NewtonOptions)

    def __post_init__(self):
        if self.eps <= 0:
            raise EpslabError("eps must be positive for the elliptic solver")
        if self.m < 2:
            raise EpslabError("need at least two time intervals")
        if self.phi0.grid != self.phi1.grid:
            raise EpslabError("endpoint potentials on different grids")


def q_values(values: np.ndarray, tau: float, h: float) -> np.ndarray:
    """q on interior slices of a raw (m+1, ...) array."""
    ptt = path_dtt(values, tau)
    pt = (values[2:] - values[:-2]) / (2.0 * tau)
    dens = slice_densities(values, h)[1:-1]
    gsq = np.zeros_like(ptt)
    for j in range(ptt.shape[0]):
        for g in grad_array(pt[j], h):
            gsq[j] += g * g
    return ptt * dens - gsq


def q_operator(path: PathInH) -> np.ndarray:
    """q(Phi) on interior slices; equals the flow residual plus eps."""
    return q_values(path.values, path.tau, path.grid.h)


def q_linearization(path: PathInH, psi: np.ndarray) -> np.ndarray:
    """Directional derivative of q at the path in the direction psi
    (a family with the same shape, vanishing on the boundary slices is not
    required here). Matches (q(Phi + s psi) - q(Phi - s psi)) / 2s up to O(s^2).
    """
    v = path.values
    psi = np.asarray(psi, dtype=float)
    if psi.shape != v.shape:
        raise EpslabError("direction shape must match the path")
    tau, h = path.tau, path.grid.h
    ptt = path_dtt(v, tau)
    pt = (v[2:] - v[:-2]) / (2.0 * tau)
    stt = path_dtt(psi, tau)
    st = (psi[2:] - psi[:-2]) / (2.0 * tau)
    dens = slice_densities(v, h)[1:-1]
    out = stt * dens
    for j in range(out.shape[0]):
        out[j] -= ptt[j] * lap_array(psi[j], h)
        for gp, gs in zip(grad_array(pt[j], h), grad_array(st[j], h)):
            out[j] -= 2.0 * gp * gs
    return out


def _shift_index(shape, ax, step):
    flat = np.arange(int(np.prod(shape))).reshape(shape)
    return np.roll(flat, -step, axis=ax).ravel()


def _assemble_jacobian(values: np.ndarray, tau: float, h: float) -> sp.csr_matrix:
    """Sparse Jacobian of the interior q residual w.r.t. interior unknowns."""
    m = values.shape[0] - 1
    shape = values.shape[1:]
    nx = int(np.prod(shape))
    nunk = (m - 1) * nx
    dens = slice_densities(values, h)[1:-1]
    b = path_dtt(values, tau)
    pt = (values[2:] - values[:-2]) / (2.0 * tau)
    w = [np.stack([grad_array(pt[j], h)[ax] for j in range(m - 1)])
         for ax in range(len(shape))]

    a_flat = dens.reshape(m - 1, nx)
    b_flat = b.reshape(m - 1, nx)
    jj = np.repeat(np.arange(1, m), nx)
    xx = np.tile(np.arange(nx), m - 1)
    rows0 = (jj - 1) * nx + xx

    entries = []  # (dj, col_index_map or None, value (m-1, nx))
    ident = np.arange(nx)
    diag = -2.0 * a_flat / tau**2 - b_flat * (2.0 * len(shape)) / h**2
    entries.append((0, ident, diag))
    entries.append((1, ident, a_flat / tau**2))
    entries.append((-1, ident, a_flat / tau**2))
    for ax in range(len(shape)):
        plus = _shift_index(shape, ax, 1)
        minus = _shift_index(shape, ax, -1)
        wf = w[ax].reshape(m - 1, nx)
        entries.append((0, plus, b_flat / h**2))
        entries.append((0, minus, b_flat / h**2))
        c = -wf / (2.0 * h * tau)
        entries.append((1, plus, c))
        entries.append((1, minus, -c))
        entries.append((-1, plus, -c))
        entries.append((-1, minus, c))

    rows, cols, vals = [], [], []
    for dj, cmap, val in entries:
        tj = jj + dj
        keep = (tj >= 1) & (tj <= m - 1)
        rows.append(rows0[keep])
        cols.append((tj[keep] - 1) * nx + cmap[xx[keep]])
        vals.append(val.ravel()[keep])
    J = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nunk, nunk))
    return J.tocsr()


def _newton(values, eps, tau, h, opts: NewtonOptions):
    """Damped Newton on the interior slices; boundary slices held fixed.
    Returns (converged, values, iterations)."""
    m = values.shape[0] - 1
    shape = values.shape[1:]
    nx = int(np.prod(shape))
    values = values.copy()
    for it in range(opts.max_iter):
        F = q_values(values, tau, h) - eps
        res = np.abs(F).max()
        if res <= opts.tol:
            return True, values, it
        J = _assemble_jacobian(values, tau, h)
        delta = spla.spsolve(J, -F.reshape(-1)).reshape((m - 1,) + shape)
        alpha = 1.0
        while alpha >= MIN_CONTINUATION_STEP:
            trial = values.copy()
            trial[1:-1] += alpha * delta
            dens_ok = slice_densities(trial, h).min() >= opts.margin
            if dens_ok:
                q_new = q_values(trial, tau, h)
                if q_new.min() > 0 and np.abs(q_new - eps).max() < res:
                    values = trial
                    break
            alpha *= opts.backtrack
        else:
            return False, values, it
    F = q_values(values, tau, h) - eps
    return bool(np.abs(F).max() <= opts.tol), values, opts.max_iter


def solve_dirichlet(problem: PhiProblem, ds0: float = 0.25) -> PathInH:
    """Continuation in the boundary data from the exactly solvable seed.

    At parameter s the boundary slices are (s phi0, s phi1); the previous
    solution plus a linear-in-t lift of the boundary increment is the Newton
    predictor. Steps halve on Newton failure and the run aborts below
    2**-20. The returned path satisfies |q - eps| <= tol on interior slices
    and has strictly positive second time differences.
    """
    grid = problem.phi0.grid
    m = problem.m
    tau = 1.0 / m
    h = grid.h
    t = (np.arange(m + 1) * tau).reshape((m + 1,) + (1,) * grid.d)
    seed = 0.5 * problem.eps * t * (t - 1.0) * np.ones((m + 1,) + grid.shape)
    p0 = problem.phi0.field.values
    p1 = problem.phi1.field.values
    lift = (1.0 - t) * p0[None] + t * p1[None]

    values = seed.copy()
    s = 0.0
    ds = ds0
    while s < 1.0 - 1e-14:
        ds = min(ds, 1.0 - s)
        trial = values + ds * lift
        trial[0] = (s + ds) * p0
        trial[-1] = (s + ds) * p1
        ok, new_values, _ = _newton(trial, problem.eps, tau, h, problem.newton)
        if ok:
            values = new_values
            s += ds
            ds = min(2.0 * ds, ds0)
        else:
            ds *= 0.5
            if ds < MIN_CONTINUATION_STEP:
                res = float(np.abs(q_values(values, tau, h) - problem.eps).max())
                raise StepTooSmall(
                    f"continuation stalled at s={s:.6f} (residual {res:.2e})")
    ptt_min = float(path_dtt(values, tau).min())
    if ptt_min <= 0:
        raise NewtonDiverged("solution lost strict convexity in t", s=1.0,
                             residual=ptt_min)
    return PathInH(grid, values, margin=problem.newton.margin)


# -- the quadratic behind convexity and uniqueness -------------------------------

def lorentz_q(A: np.ndarray) -> float:
    """Q(A) = A_00 * sum_{i>=1} A_ii - sum_{i>=1} A_i0^2 on symmetric matrices.

    Induced from a Lorentzian form, it is nonnegative on the positive
    semidefinite cone and concave along segments between matrices of equal
    positive Q with positive corner entries.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise EpslabError("a square matrix is required")
    if not np.allclose(A, A.T, atol=1e-10 * max(1.0, np.abs(A).max())):
        raise EpslabError("matrix is not symmetric")
    return float(A[0, 0] * (np.trace(A) - A[0, 0]) - np.sum(A[1:, 0] ** 2))


def hessian_quadratic_min(path: PathInH) -> float:
    """Minimum over interior nodes of Q applied to the discrete space-time
    Hessian block matrix [[Phi_tt, Phi_t,i], [Phi_t,j, delta_ij + Phi_ij]].
    Positive for any solved instance with eps > 0."""
    v = path.values
    tau, h = path.tau, path.grid.h
    d = path.grid.d
    ptt = path_dtt(v, tau)
    pt = (v[2:] - v[:-2]) / (2.0 * tau)
    mixed = [np.stack([grad_array(pt[j], h)[ax] for j in range(path.m - 1)])
             for ax in range(d)]
    # second x-differences with the same narrow stencil used by the density
    sec = [np.stack([
        (np.roll(v[j], -1, axis=ax) - 2.0 * v[j] + np.roll(v[j], 1, axis=ax)) / h**2
        for j in range(1, path.m)]) for ax in range(d)]
    trace_lower = sum(1.0 + s for s in sec)
    qmin = ptt * trace_lower - sum(mx**2 for mx in mixed)
    return float(qmin.min())


def convexity_report(path_a: PathInH, path_b: PathInH, eps: float,
                     samples: int = 11) -> dict:
    """Sample the action along the straight segment between two paths with the
    same endpoints. Between two solutions the sampled action is convex and
    q - eps stays nonnegative at interior nodes; for arbitrary admissible
    paths the numbers are reported without judgement.
    """
    if path_a.grid != path_b.grid or path_a.m != path_b.m:
        raise EpslabError("paths must share grid and time resolution")
    if (np.abs(path_a.values[0] - path_b.values[0]).max() > 1e-12
            or np.abs(path_a.values[-1] - path_b.values[-1]).max() > 1e-12):
        raise EpslabError("paths must share boundary slices")
    svals = np.linspace(0.0, 1.0, samples)
    actions = []
    min_q = np.inf
    for s in svals:
        blend = s * path_a.values + (1.0 - s) * path_b.values
        path_s = PathInH(path_a.grid, blend, margin=min(path_a.margin, path_b.margin))
        actions.append(action(path_s, eps))
        if 0.0 < s < 1.0:
            q = q_values(blend, path_a.tau, path_a.grid.h)
            min_q = min(min_q, float((q - eps).min()))
    actions = np.asarray(actions)
    second = actions[2:] - 2.0 * actions[1:-1] + actions[:-2]
    return {
        "s": svals,
        "action": actions,
        "min_second_difference": float(second.min()) if second.size else np.nan,
        "min_q_minus_eps": float(min_q),
    }
