"""Matrix Nahm system: forward integration, orbit invariants, and the
variational two-point problem on positive Hermitian matrices.

The ungauged system is dT_i/dt = [T_j, T_k] over cyclic (i, j, k); the
combination T_2 + i T_3 evolves by conjugation, so its spectrum is a
conserved quantity of the flow. Boundary value problems are solved through
the substitution T_0 + i T_1 = (dg/dt) g^{-1}, T_2 + i T_3 = g B g^{-1},
which reduces the system to the Euler-Lagrange equation of

    E(h) = int 1/2 Tr((h^{-1} dh/dt)^2) + Tr(h B h^{-1} B*) dt

for h = g* g, a positive-definite Hermitian path. The 1/2 fixes the metric
normalization on positive Hermitian matrices: it is the unique weight for
which stationary paths of E reproduce the matrix system exactly under the
substitution above (any other weight shifts the potential coupling). The discrete functional
is minimized by safeguarded gradient descent in the matrix-log coordinates
h_j = exp(s_j), which keeps every iterate positive without projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUp, EpslabError, NotConverged
from .space_h import path_dt

__all__ = [
    "NahmState",
    "HermitianPath",
    "BvpOptions",
    "nahm_rhs",
    "integrate_nahm",
    "spectral_invariants",
    "vb",
    "action_h",
    "solve_bvp",
    "symmetric_space_geodesic",
    "reconstruct_nahm",
]

SKEW_TOL = 1e-12


def _check_skew(T: np.ndarray, name: str):
    scale = max(1.0, np.abs(T).max())
    if np.abs(T + T.conj().T).max() > SKEW_TOL * scale * 10:
        raise EpslabError(f"{name} is not skew-Hermitian")


@dataclass(frozen=True)
class NahmState:
    T0: np.ndarray
    T1: np.ndarray
    T2: np.ndarray
    T3: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        mats = []
        for name in ("T0", "T1", "T2", "T3"):
            T = np.asarray(getattr(self, name), dtype=complex)
            object.__setattr__(self, name, T)
            if T.shape != self.T0.shape or T.ndim != 2 or T.shape[0] != T.shape[1]:
                raise EpslabError("all four matrices must be square and equal-sized")
            _check_skew(T, name)
            mats.append(T)

    @property
    def n(self) -> int:
        return self.T0.shape[0]


@dataclass(frozen=True)
class HermitianPath:
    """Positive-definite Hermitian slices h_j at t_j = j/m, plus orbit datum B."""

    values: np.ndarray    # (m+1, n, n) complex
    B: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        B = np.asarray(self.B, dtype=complex)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "B", B)
        if v.ndim != 3 or v.shape[1] != v.shape[2] or B.shape != v.shape[1:]:
            raise EpslabError("path must be (m+1, n, n) with matching B")
        for j in range(v.shape[0]):
            if np.abs(v[j] - v[j].conj().T).max() > 1e-10 * max(1.0, np.abs(v[j]).max()):
                raise EpslabError(f"slice {j} is not Hermitian")
            w = np.linalg.eigvalsh(v[j])
            if w.min() <= 1e-10:
                raise EpslabError(f"slice {j} is not positive definite")

    @property
    def m(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n(self) -> int:
        return self.values.shape[1]


def _bracket(A, B):
    return A @ B - B @ A


def nahm_rhs(state: NahmState, gauged: bool = False):
    """Right-hand side (dT1, dT2, dT3) of the matrix system; with `gauged`
    the drift -[T0, T_i] is included. Skew-Hermitian in, skew-Hermitian out."""
    T0, T1, T2, T3 = state.T0, state.T1, state.T2, state.T3
    d1 = _bracket(T2, T3)
    d2 = _bracket(T3, T1)
    d3 = _bracket(T1, T2)
    if gauged:
        d1 = d1 - _bracket(T0, T1)
        d2 = d2 - _bracket(T0, T2)
        d3 = d3 - _bracket(T0, T3)
    return d1, d2, d3


def _skew_part(T):
    return 0.5 * (T - T.conj().T)


def integrate_nahm(init: NahmState, t_span=(0.0, 1.0), dt: float = 1e-3):
    """RK4 on the ungauged system with an anti-Hermitian re-projection per
    step; aborts with BlowUp when any norm passes 1e12 (the flow has movable
    poles). Returns the list of states including the initial one."""
    if dt <= 0:
        raise EpslabError("dt must be positive")
    t0, t1 = map(float, t_span)
    steps = int(round((t1 - t0) / dt))
    zero = np.zeros_like(np.asarray(init.T0))

    def rhs(T1, T2, T3):
        return _bracket(T2, T3), _bracket(T3, T1), _bracket(T1, T2)

    T1, T2, T3 = init.T1.copy(), init.T2.copy(), init.T3.copy()
    states = [NahmState(zero, T1, T2, T3, t0)]
    t = t0
    for step in range(steps):
        a1 = rhs(T1, T2, T3)
        a2 = rhs(*(X + 0.5 * dt * K for X, K in zip((T1, T2, T3), a1)))
        a3 = rhs(*(X + 0.5 * dt * K for X, K in zip((T1, T2, T3), a2)))
        a4 = rhs(*(X + dt * K for X, K in zip((T1, T2, T3), a3)))
        T1, T2, T3 = (
            _skew_part(X + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))
            for X, k1, k2, k3, k4 in zip((T1, T2, T3), a1, a2, a3, a4))
        t = t0 + (step + 1) * dt
        norm = max(np.abs(T1).max(), np.abs(T2).max(), np.abs(T3).max())
        if not np.isfinite(norm) or norm > 1e12:
            raise BlowUp(f"trajectory blew up at t={t:.6f}", t=t)
        states.append(NahmState(zero, T1, T2, T3, t))
    return states


def spectral_invariants(state: NahmState) -> np.ndarray:
    """Eigenvalues of T2 + i T3, sorted lexicographically (real, then imag);
    constant along trajectories because the flow conjugates this matrix."""
    return np.sort(np.linalg.eigvals(state.T2 + 1j * state.T3))


# -- the variational side --------------------------------------------------------

def vb(h: np.ndarray, B: np.ndarray) -> float:
    """Tr(h B h^{-1} B*): the squared norm of B conjugated into the gauge
    where the metric is h; nonnegative, zero iff B commutes appropriately."""
    h = np.asarray(h, dtype=complex)
    B = np.asarray(B, dtype=complex)
    w = np.linalg.eigvalsh(h)
    if w.min() <= 0:
        raise EpslabError("h must be positive definite")
    val = np.trace(h @ B @ np.linalg.solve(h, B.conj().T))
    return float(val.real)


def _herm_eig(s):
    w, V = np.linalg.eigh(s)
    return w, V


def _expm_herm(s):
    w, V = _herm_eig(s)
    return (V * np.exp(w)) @ V.conj().T


def _expm_frechet_herm(s, E):
    """Frechet derivative of expm at Hermitian s in direction E, via the
    divided-difference (Daleckii-Krein) formula; self-adjoint in E."""
    w, V = _herm_eig(s)
    ew = np.exp(w)
    denom = w[:, None] - w[None, :]
    num = ew[:, None] - ew[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        F = np.where(np.abs(denom) > 1e-14, num / denom,
                     0.5 * (ew[:, None] + ew[None, :]))
    Et = V.conj().T @ E @ V
    return V @ (F * Et) @ V.conj().T


def _trapezoid_weights(m):
    w = np.ones(m + 1)
    w[0] = w[-1] = 0.5
    return w


def _dt_stencil(m, tau):
    """Rows of the first-derivative stencil: list of (l, coeff) per slice j."""
    rows = []
    for j in range(m + 1):
        if j == 0:
            rows.append([(0, -1.5 / tau), (1, 2.0 / tau), (2, -0.5 / tau)])
        elif j == m:
            rows.append([(m, 1.5 / tau), (m - 1, -2.0 / tau), (m - 2, 0.5 / tau)])
        else:
            rows.append([(j + 1, 0.5 / tau), (j - 1, -0.5 / tau)])
    return rows


def action_h(path: HermitianPath) -> float:
    """Trapezoid-in-t of 1/2 Tr((h^{-1} dh/dt)^2) + Tr(h B h^{-1} B*), with
    dh/dt by centered differences (one-sided second order at the ends)."""
    v = path.values
    m = path.m
    tau = 1.0 / m
    d = path_dt(v, tau)
    tot = 0.0
    wts = _trapezoid_weights(m)
    for j in range(m + 1):
        Mj = np.linalg.solve(v[j], d[j])
        kin = 0.5 * np.trace(Mj @ Mj).real
        tot += wts[j] * (kin + vb(v[j], path.B))
    return float(tau * tot)


def _action_and_gradient(hs, B, tau):
    """Value and Hermitian gradient of the trapezoid/centered-difference
    action (the evaluation functional action_h)."""
    m = hs.shape[0] - 1
    wts = _trapezoid_weights(m)
    d = path_dt(hs, tau)
    stencil = _dt_stencil(m, tau)
    grads = np.zeros_like(hs)
    total = 0.0
    hinv = np.stack([np.linalg.inv(hs[j]) for j in range(m + 1)])
    for j in range(m + 1):
        Mj = hinv[j] @ d[j]
        kin = 0.5 * np.trace(Mj @ Mj).real
        P = hinv[j] @ d[j] @ hinv[j]          # h^{-1} d h^{-1}, Hermitian
        # d/dh_j of the kinetic term through the inverse
        grads[j] += -wts[j] * (P @ d[j] @ hinv[j])
        # d/dh_l of the kinetic term through the stencil of d_j
        for l, c in stencil[j]:
            grads[l] += wts[j] * c * P
        Bh = B @ hinv[j] @ B.conj().T
        GV = Bh - hinv[j] @ B.conj().T @ hs[j] @ B @ hinv[j]
        grads[j] += wts[j] * GV
        total += wts[j] * (kin + np.trace(hs[j] @ Bh).real)
    grads *= tau
    # keep gradients exactly Hermitian against rounding drift
    for j in range(m + 1):
        grads[j] = 0.5 * (grads[j] + grads[j].conj().T)
    return float(tau * total), grads


def _objective_and_gradient(hs, B, tau):
    """Value and Hermitian gradient of the interval-form discrete action

        sum_j (tau/2) Tr((hbar_j^{-1} (h_{j+1}-h_j)/tau)^2) + trapezoid of V_B,

    with hbar the interval midpoint. Unlike the centered-difference form,
    its stationarity system is the standard three-point discrete geodesic
    equation: second-order consistent up to the endpoints, no parity
    splitting, so minimizers converge to the continuum solution without
    boundary layers."""
    m = hs.shape[0] - 1
    wts = _trapezoid_weights(m)
    grads = np.zeros_like(hs)
    total = 0.0
    for j in range(m):
        hbar = 0.5 * (hs[j] + hs[j + 1])
        v = (hs[j + 1] - hs[j]) / tau
        hbinv = np.linalg.inv(hbar)
        Mv = hbinv @ v
        total += 0.5 * tau * np.trace(Mv @ Mv).real
        P = hbinv @ v @ hbinv
        grads[j + 1] += P
        grads[j] += -P
        Q = -0.5 * tau * (P @ v @ hbinv)
        grads[j] += Q
        grads[j + 1] += Q
    hinv = [np.linalg.inv(hs[j]) for j in range(m + 1)]
    for j in range(m + 1):
        Bh = B @ hinv[j] @ B.conj().T
        total += tau * wts[j] * np.trace(hs[j] @ Bh).real
        GV = Bh - hinv[j] @ B.conj().T @ hs[j] @ B @ hinv[j]
        grads[j] += tau * wts[j] * GV
    for j in range(m + 1):
        grads[j] = 0.5 * (grads[j] + grads[j].conj().T)
    return float(total), grads


@dataclass(frozen=True)
class BvpOptions:
    tol: float = 1e-7          # Frobenius norm of the log-coordinate gradient
    max_iter: int = 5000
    armijo: float = 1e-4
    shrink: float = 0.5


def _kinetic_hessian_lu(m, tau):
    """LU factors of the constant-coefficient kinetic Hessian on interior
    slices (2/tau times the path Laplacian), used as a preconditioner acting
    identically on every matrix entry channel."""
    import scipy.linalg as sla

    T = 2.0 * np.eye(m - 1) - np.eye(m - 1, k=1) - np.eye(m - 1, k=-1)
    return sla.lu_factor(T / tau)


def solve_bvp(h0: np.ndarray, h1: np.ndarray, B: np.ndarray,
              opts: BvpOptions = BvpOptions(), m: int = 64):
    """Minimize the discrete action over interior slices with fixed endpoints.

    Interior slices are parameterized as matrix exponentials of Hermitian
    logs, seeded with the linear interpolation of log h0 and log h1. Descent
    directions are the gradient preconditioned by the constant-coefficient
    kinetic Hessian (a small banded matrix factored once), with Armijo
    backtracking, so the recorded action trace decreases monotonically and
    the iteration count stays resolution-independent. Returns
    (HermitianPath, info dict with the action trace and iteration count).
    """
    import scipy.linalg as sla

    if m < 8:
        raise EpslabError("need at least 8 time intervals")
    h0 = np.asarray(h0, dtype=complex)
    h1 = np.asarray(h1, dtype=complex)
    B = np.asarray(B, dtype=complex)
    n = h0.shape[0]
    tau = 1.0 / m

    def logm_herm(h):
        w, V = np.linalg.eigh(h)
        if w.min() <= 0:
            raise EpslabError("endpoints must be positive definite")
        return (V * np.log(w)) @ V.conj().T

    s_ends = (logm_herm(h0), logm_herm(h1))
    t = np.arange(m + 1) * tau
    s = np.stack([(1 - tj) * s_ends[0] + tj * s_ends[1] for tj in t])

    def assemble(s_arr):
        hs = np.empty((m + 1, n, n), dtype=complex)
        hs[0] = h0
        hs[-1] = h1
        for j in range(1, m):
            hs[j] = _expm_herm(s_arr[j])
        return hs

    def value_only(s_arr):
        hs = assemble(s_arr)
        wts = _trapezoid_weights(m)
        tot = 0.0
        for j in range(m):
            hbar = 0.5 * (hs[j] + hs[j + 1])
            v = (hs[j + 1] - hs[j]) / tau
            Mv = np.linalg.solve(hbar, v)
            tot += 0.5 * tau * np.trace(Mv @ Mv).real
        for j in range(m + 1):
            tot += tau * wts[j] * vb(hs[j], B)
        return float(tot)

    def value_and_grad(s_arr):
        hs = assemble(s_arr)
        val, gh = _objective_and_gradient(hs, B, tau)
        gs = np.zeros_like(gh)
        for j in range(1, m):
            gs[j] = _expm_frechet_herm(s_arr[j], gh[j])
            gs[j] = 0.5 * (gs[j] + gs[j].conj().T)
        return val, gs

    lu = _kinetic_hessian_lu(m, tau)

    def precondition(g):
        flat = g[1:-1].reshape(m - 1, -1)
        out = np.empty_like(flat)
        out[:] = sla.lu_solve(lu, flat.real) + 1j * sla.lu_solve(lu, flat.imag)
        d = np.zeros_like(g)
        d[1:-1] = out.reshape(m - 1, n, n)
        return d

    val, g = value_and_grad(s)
    gnorm = np.sqrt(np.sum(np.abs(g[1:-1]) ** 2).real)
    trace = [val]
    alpha = 1.0
    for it in range(opts.max_iter):
        if gnorm < opts.tol:
            return (HermitianPath(assemble(s), B),
                    {"iterations": it, "grad_norm": gnorm,
                     "action_trace": np.asarray(trace)})
        direction = precondition(g)
        slope = float(np.sum((g[1:-1].conj() * direction[1:-1])).real)
        accepted = False
        a = alpha
        while a > 1e-16:
            s_try = s.copy()
            s_try[1:-1] = s[1:-1] - a * direction[1:-1]
            val_try = value_only(s_try)
            if val_try <= val - opts.armijo * a * slope + 1e-14 * abs(val):
                s = s_try
                val, g = value_and_grad(s)
                gnorm = np.sqrt(np.sum(np.abs(g[1:-1]) ** 2).real)
                trace.append(val)
                alpha = min(1.0, a * 2.0)
                accepted = True
                break
            a *= opts.shrink
        if not accepted:
            break
    if gnorm >= opts.tol:
        raise NotConverged(f"descent stalled with gradient norm {gnorm:.3e}",
                           residual=gnorm)
    return (HermitianPath(assemble(s), B),
            {"iterations": opts.max_iter, "grad_norm": gnorm,
             "action_trace": np.asarray(trace)})


def symmetric_space_geodesic(h0: np.ndarray, h1: np.ndarray, times) -> np.ndarray:
    """Closed-form geodesic h(t) = h0^{1/2} exp(t log(h0^{-1/2} h1 h0^{-1/2})) h0^{1/2}."""
    h0 = np.asarray(h0, dtype=complex)
    h1 = np.asarray(h1, dtype=complex)
    w, V = np.linalg.eigh(h0)
    r = (V * np.sqrt(w)) @ V.conj().T
    rinv = (V * (1.0 / np.sqrt(w))) @ V.conj().T
    mid = rinv @ h1 @ rinv
    wm, Vm = np.linalg.eigh(0.5 * (mid + mid.conj().T))
    out = []
    for t in np.atleast_1d(times):
        out.append(r @ ((Vm * np.exp(t * np.log(wm))) @ Vm.conj().T) @ r)
    return np.asarray(out)


def reconstruct_nahm(path: HermitianPath):
    """Back out the matrix quadruple from a Hermitian path.

    g_j is the positive square root of h_j; T0 + i T1 = (dg/dt) g^{-1} and
    T2 + i T3 = g B g^{-1}, split into skew-Hermitian parts. Returns the
    state trajectory together with the sup-norm residual of the full gauged
    system, which is O(m^-2 + descent tolerance) exactly when the path is a
    discrete minimizer.
    """
    v = path.values
    m = path.m
    tau = 1.0 / m
    roots = np.empty_like(v)
    for j in range(m + 1):
        w, V = np.linalg.eigh(v[j])
        roots[j] = (V * np.sqrt(w)) @ V.conj().T
    droots = path_dt(roots, tau)
    states = []
    for j in range(m + 1):
        G = droots[j] @ np.linalg.inv(roots[j])
        C = roots[j] @ path.B @ np.linalg.inv(roots[j])
        # the evolution system's connection is minus the skew part of g' g^-1:
        # with that sign the two algebraic equations hold identically
        T0 = -_skew_part(G)
        T1 = -0.5j * (G + G.conj().T)
        T2 = _skew_part(C)
        T3 = -0.5j * (C + C.conj().T)
        states.append(NahmState(T0, T1, T2, T3, j * tau))
    # residual of dT_i/dt + [T0, T_i] = [T_j, T_k]; the two rows at each end
    # mix one-sided and centered stencils and converge only at first order,
    # so the reported sup runs over the junction-free rows 2 .. m-2.
    stacked = [np.stack([getattr(s, f"T{i}") for s in states]) for i in range(4)]
    dts = [None] + [path_dt(stacked[i], tau) for i in (1, 2, 3)]
    residual = 0.0
    for j in range(2, m - 1):
        T0, T1, T2, T3 = (stacked[i][j] for i in range(4))
        pairs = {1: (T2, T3), 2: (T3, T1), 3: (T1, T2)}
        for i in (1, 2, 3):
            R = dts[i][j] + _bracket(T0, (T1, T2, T3)[i - 1]) - _bracket(*pairs[i])
            residual = max(residual, np.abs(R).max())
    return states, float(residual)
