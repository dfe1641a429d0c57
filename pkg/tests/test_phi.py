import numpy as np
import pytest

from epslab import (
    NewtonOptions,
    PathInH,
    PhiProblem,
    Potential,
    ScalarField,
    TorusGrid,
    convexity_report,
    hessian_quadratic_min,
    lorentz_q,
    potential_from_modes,
    q_linearization,
    q_operator,
    solve_dirichlet,
)
from epslab.errors import EpslabError
from epslab.phi import q_values


def flat_seed(grid, m, eps):
    t = (np.arange(m + 1) / m).reshape((m + 1,) + (1,) * grid.d)
    return 0.5 * eps * t * (t - 1.0) * np.ones((m + 1,) + grid.shape)


def zero_potential(n):
    g = TorusGrid(1, n)
    return Potential(ScalarField(g, np.zeros(n)))


def small_boundary_data(n, amp=0.05):
    g = TorusGrid(1, n)
    phi0 = potential_from_modes(g, [(1, 0.6 * amp, 0.0), (2, 0.4 * amp, 1.2)])
    phi1 = potential_from_modes(g, [(1, -0.5 * amp, 0.7), (3, 0.5 * amp, 0.0)])
    return g, phi0, phi1


def test_q_operator_flat_and_linear():
    g = TorusGrid(1, 16)
    m = 16
    for c in (0.5, 2.0):
        seed = PathInH(g, flat_seed(g, m, c))
        assert np.allclose(q_operator(seed), c, atol=1e-11)
    t = (np.arange(m + 1) / m)[:, None]
    lin = PathInH(g, 0.03 * t * np.ones((m + 1, 16)))
    assert np.abs(q_operator(lin)).max() < 1e-12


def test_q_matches_hessian_determinant_d1():
    # for one space dimension q is the 2x2 space-time Hessian determinant
    # (with 1 added to the xx entry); compare on an analytic function
    def gap(n, m):
        g = TorusGrid(1, n)
        t = (np.arange(m + 1) / m)[:, None]
        x = (np.arange(n) / n)[None, :]
        vals = 0.4 * t * t + 0.002 * np.sin(np.pi * t) * np.cos(2 * np.pi * x)
        path = PathInH(g, vals)
        q = q_values(path.values, path.tau, g.h)
        tt = 0.8 + -0.002 * np.pi**2 * np.sin(np.pi * t) * np.cos(2 * np.pi * x)
        tx = -2 * np.pi * 0.002 * np.pi * np.cos(np.pi * t) * np.sin(2 * np.pi * x)
        xx = 1.0 - 0.002 * 4 * np.pi**2 * np.sin(np.pi * t) * np.cos(2 * np.pi * x)
        det = tt * xx - tx * tx
        return np.abs(q - det[1:-1]).max()

    assert gap(16, 16) / gap(32, 32) > 3.0


def test_q_linearization():
    g = TorusGrid(1, 32)
    m = 16
    seed = PathInH(g, flat_seed(g, m, 1.3))
    assert np.abs(q_linearization(seed, np.zeros((m + 1, 32)))).max() == 0.0
    # at the flat seed the derivative is psi_tt - eps * Lap psi exactly
    rng = np.random.default_rng(0)
    psi = rng.normal(size=(m + 1, 32))
    from epslab.grid import lap_array
    from epslab.space_h import path_dtt
    got = q_linearization(seed, psi)
    want = path_dtt(psi, 1.0 / m) - 1.3 * np.stack(
        [lap_array(psi[j], g.h) for j in range(1, m)])
    assert np.allclose(got, want, atol=1e-9)


def test_q_linearization_is_directional_derivative():
    g, phi0, phi1 = small_boundary_data(32)
    m = 16
    t = (np.arange(m + 1) / m)[:, None]
    base = flat_seed(g, m, 1.0) + (1 - t) * phi0.field.values + t * phi1.field.values
    path = PathInH(g, base)
    rng = np.random.default_rng(1)
    psi = 0.01 * rng.normal(size=base.shape)
    lin = q_linearization(path, psi)
    errs = []
    for s in (1e-3, 5e-4):
        fd = (q_values(base + s * psi, path.tau, g.h)
              - q_values(base - s * psi, path.tau, g.h)) / (2 * s)
        errs.append(np.abs(fd - lin).max())
    assert errs[1] < errs[0] / 3.0


def test_solver_accepts_exact_seed():
    g = TorusGrid(1, 64)
    prob = PhiProblem(zero_potential(64), zero_potential(64), eps=1.0, m=64)
    path = solve_dirichlet(prob)
    exact = flat_seed(g, 64, 1.0)
    assert np.abs(path.values - exact).max() < 1e-10


def test_solver_residual_and_convexity():
    g, phi0, phi1 = small_boundary_data(64)
    prob = PhiProblem(phi0, phi1, eps=1.0, m=32)
    path = solve_dirichlet(prob)
    assert np.abs(q_operator(path) - 1.0).max() <= prob.newton.tol
    assert hessian_quadratic_min(path) > 0.0
    assert np.allclose(path.values[0], phi0.field.values, atol=1e-14)
    assert np.allclose(path.values[-1], phi1.field.values, atol=1e-14)


def test_solver_time_reflection_symmetry():
    g = TorusGrid(1, 64)
    phi = potential_from_modes(g, [(1, 0.05, 0.3), (2, 0.03, 2.0)])
    path = solve_dirichlet(PhiProblem(phi, phi, eps=1.0, m=32))
    assert np.abs(path.values - path.values[::-1]).max() < 1e-8


def test_solver_schedule_independence():
    g, phi0, phi1 = small_boundary_data(64)
    prob = PhiProblem(phi0, phi1, eps=1.0, m=32)
    a = solve_dirichlet(prob, ds0=0.25)
    b = solve_dirichlet(prob, ds0=0.2)
    assert np.abs(a.values - b.values).max() < 10 * prob.newton.tol


def test_solver_small_amplitude_linearization():
    # response to amplitude-a boundary data is linear up to O(a^2)
    g = TorusGrid(1, 32)
    m = 16
    sols = {}
    for a in (0.04, 0.02):
        phi0 = potential_from_modes(g, [(1, a, 0.0)])
        phi1 = potential_from_modes(g, [(2, -a, 0.5)])
        path = solve_dirichlet(PhiProblem(phi0, phi1, eps=1.0, m=m))
        sols[a] = path.values - flat_seed(g, m, 1.0)
    resp_full = sols[0.04] / 0.04
    resp_half = sols[0.02] / 0.02
    gap = np.abs(resp_full - resp_half).max()
    assert gap < 0.04 * np.abs(resp_full).max()


def test_solver_self_convergence():
    # solution error versus a finer reference drops at second order
    def solved(n, m):
        g = TorusGrid(1, n)
        lam = lambda k: 4 * np.pi**2 * k**2
        # continuum-normalized data so every resolution sees the same problem
        from epslab.transforms import poisson_solve
        from epslab.recipes import density_from_modes
        x = np.arange(n) / n
        rho0 = ScalarField(g, 1.0 + 0.05 * np.cos(2 * np.pi * x))
        rho1 = ScalarField(g, 1.0 - 0.04 * np.cos(2 * np.pi * x + 0.9))
        return solve_dirichlet(PhiProblem(poisson_solve(rho0), poisson_solve(rho1),
                                          eps=1.0, m=m)).values

    coarse = solved(16, 16)
    mid = solved(32, 32)
    fine = solved(64, 64)
    e1 = np.abs(coarse - fine[::4, ::4]).max()
    e2 = np.abs(mid - fine[::2, ::2]).max()
    assert e1 / e2 > 3.0


def test_lorentz_q_values():
    assert lorentz_q(np.eye(4)) == pytest.approx(3.0)
    assert lorentz_q(np.array([[1.0, 1.0], [1.0, 1.0]])) == pytest.approx(0.0)
    assert lorentz_q(np.array([[2.0, 1.0], [1.0, 3.0]])) == pytest.approx(5.0)
    with pytest.raises(EpslabError):
        lorentz_q(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_lorentz_q_psd_cone():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        k = rng.integers(2, 7)
        X = rng.normal(size=(k, k))
        A = X @ X.T                      # positive semidefinite
        assert lorentz_q(A) >= -1e-12
        Apd = A + 0.05 * np.eye(k)
        assert lorentz_q(Apd) > 0.0


def test_lorentz_q_hyperbolic_concavity():
    rng = np.random.default_rng(12)
    svals = np.linspace(0.1, 0.9, 9)
    for _ in range(300):
        k = rng.integers(2, 7)
        X = rng.normal(size=(k, k))
        Y = rng.normal(size=(k, k))
        A = X @ X.T + 0.1 * np.eye(k)
        B = Y @ Y.T + 0.1 * np.eye(k)
        # scale B onto the same level set of the quadratic
        B *= np.sqrt(lorentz_q(A) / lorentz_q(B))
        qa = lorentz_q(A)
        for s in svals:
            assert lorentz_q(s * A + (1 - s) * B) >= qa - 1e-10
        qd = lorentz_q(A - B)
        assert qd <= 1e-10
        if np.abs(A - B).max() > 1e-6:
            assert qd < 0.0


def test_convexity_report():
    g, phi0, phi1 = small_boundary_data(32)
    m = 16
    prob = PhiProblem(phi0, phi1, eps=1.0, m=m)
    sol_a = solve_dirichlet(prob, ds0=0.25)
    sol_b = solve_dirichlet(prob, ds0=0.125)
    same = convexity_report(sol_a, sol_a, 1.0, samples=5)
    assert abs(same["min_second_difference"]) < 1e-13
    assert abs(same["min_q_minus_eps"]) <= prob.newton.tol
    both = convexity_report(sol_a, sol_b, 1.0, samples=7)
    assert both["min_q_minus_eps"] >= -10 * prob.newton.tol
    # arbitrary admissible perturbation sharing the boundary: report only
    t = (np.arange(m + 1) / m)[:, None]
    bump = 1e-3 * np.sin(np.pi * t) * np.cos(2 * np.pi * np.arange(32) / 32)[None, :]
    pert = PathInH(g, sol_a.values + bump)
    rep = convexity_report(sol_a, pert, 1.0, samples=7)
    assert np.isfinite(rep["min_second_difference"])
    with pytest.raises(EpslabError):
        convexity_report(sol_a, PathInH(g, sol_a.values + 0.1), 1.0)
