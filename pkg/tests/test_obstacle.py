import numpy as np
import pytest

from epslab import (
    ObstacleProblem,
    Potential,
    ScalarField,
    SlabField,
    SlabGrid,
    TorusGrid,
    active_set,
    density_from_modes,
    energy_EM,
    family_sweep,
    field_from_modes,
    obstacle_L,
    potential_from_modes,
    solve_psor,
)
from epslab.errors import (EpslabError, FreeBoundaryTouchesSlab, NotNormalized,
                           NotPositive)
from epslab.obstacle import complementarity_residual


def zero_pot(n):
    g = TorusGrid(1, n)
    return g, Potential(ScalarField(g, np.zeros(n)))


def flat_problem(n=8, mz=128, M=1.0, eps=1.0):
    g, z0 = zero_pot(n)
    slab = SlabGrid(g, M, mz)
    L = obstacle_L(z0, z0, slab)
    rho0 = ScalarField(g, np.ones(n))
    return g, slab, L, ObstacleProblem(L, rho0, eps)


def closed_form_u(z, eps=1.0):
    lo, hi = -eps / 2, eps / 2
    return np.where(z < lo, 0.0, np.where(z > hi, z, (z + eps / 2) ** 2 / (2 * eps)))


def test_obstacle_L_shapes():
    g = TorusGrid(1, 16)
    slab = SlabGrid(g, 1.0, 32)
    phi0 = potential_from_modes(g, [(1, 0.05, 0.0)])
    z0 = Potential(ScalarField(g, np.zeros(16)))
    same = obstacle_L(phi0, phi0, slab)
    z = slab.z_nodes()
    assert np.allclose(same.values, np.maximum(z, 0.0)[:, None], atol=1e-15)
    L2 = obstacle_L(phi0, z0, slab)
    diff = phi0.field.values
    low = z <= (-diff.max() - slab.k)
    assert np.abs(L2.values[low]).max() == 0.0


def test_problem_validation():
    g, slab, L, _ = flat_problem()
    with pytest.raises(NotNormalized):
        ObstacleProblem(L, ScalarField(g, np.full(8, 0.9)), 1.0)
    with pytest.raises(NotPositive):
        bad = np.ones(8)
        bad[0] = -0.1
        bad[1] = 1.1 + 0.1  # keep the mean at one
        ObstacleProblem(L, ScalarField(g, bad), 1.0)


def test_energy_values():
    g, slab, L, prob = flat_problem(mz=64)
    z = slab.z_nodes()
    zero = SlabField(slab, np.zeros(slab.shape))
    assert energy_EM(zero, prob) == pytest.approx(0.0, abs=1e-15)
    lin = SlabField(slab, np.tile(z[:, None], (1, 8)))
    # z-derivative contributes (eps/2) * 2M, the source integral vanishes
    assert energy_EM(lin, prob) == pytest.approx(prob.eps * slab.M, abs=1e-12)
    # U = L with flat data: kinetic (eps/2) M, source + M^2/2
    obst = SlabField(slab, L.values)
    expected = prob.eps * slab.M / 2 + slab.M**2 / 2
    assert energy_EM(obst, prob) == pytest.approx(expected, abs=2e-2 * slab.k)


def test_psor_flat_closed_form():
    g, slab, L, prob = flat_problem(mz=128)
    U, info = solve_psor(prob, omega="auto")
    z = slab.z_nodes()
    err = np.abs(U.values - closed_form_u(z)[:, None]).max()
    assert err < 1e-11      # kinks on nodes: the discrete solution is exact
    comp, gmin = complementarity_residual(U.values, L.values,
                                          prob.rho0.values, prob.eps,
                                          slab.k, g.h)
    assert comp < 1e-10 and gmin > -1e-10
    assert (U.values >= L.values).all()


def test_psor_relaxation_factor_independence():
    g, slab, L, prob = flat_problem(n=8, mz=64)
    Ua, _ = solve_psor(prob, omega=1.2, tol=1e-10)
    Ub, _ = solve_psor(prob, omega=1.8, tol=1e-10)
    assert np.abs(Ua.values - Ub.values).max() < 1e-8


def test_psor_monotone_energy():
    g = TorusGrid(1, 16)
    slab = SlabGrid(g, 1.0, 64)
    phi0 = potential_from_modes(g, [(1, 0.05, 0.2)])
    phi1 = potential_from_modes(g, [(2, -0.04, 1.0)])
    L = obstacle_L(phi0, phi1, slab)
    prob = ObstacleProblem(L, ScalarField(g, phi0.density()), 1.0)
    U, info = solve_psor(prob, omega=1.5, record_energy=True)
    diffs = np.diff(info.energies)
    assert diffs.max() <= 1e-12


def test_psor_free_boundary_guard():
    # with M too small the contact-free region would reach the caps
    g, slab, L, prob = flat_problem(mz=64, M=0.4)
    with pytest.raises(FreeBoundaryTouchesSlab):
        solve_psor(prob, omega=1.5)


def test_active_set_flat():
    g, slab, L, prob = flat_problem(mz=128)
    U, _ = solve_psor(prob, omega="auto")
    mask, H0, H1 = active_set(U, L, tol=3.0 * slab.k**2)
    assert np.abs(H0.values + 0.5).max() < 2 * slab.k
    assert np.abs(H1.values - 0.5).max() < 2 * slab.k
    assert np.abs(H0.values + H1.values).max() < 1e-9   # reflection symmetry
    # U = L everywhere: empty mask and both heights at the obstacle kink
    obst = SlabField(slab, L.values)
    mask0, H0e, H1e = active_set(obst, L, tol=1e-9)
    assert not mask0.any()
    assert np.abs(H0e.values).max() < 1e-12
    assert np.abs(H1e.values - H0e.values).max() == 0.0


def test_psor_refinement_off_node_kinks():
    # eps = 0.9 puts the free boundary off the grid: plain O(k^2) regime
    errs = []
    for mz in (64, 128):
        g, slab, L, prob = flat_problem(n=8, mz=mz, eps=0.9)
        U, _ = solve_psor(prob, omega="auto")
        errs.append(np.abs(U.values - closed_form_u(slab.z_nodes(), 0.9)[:, None]).max())
    order = np.log2(errs[0] / errs[1])
    assert order >= 1.8


def test_energy_minimality_against_admissible_fields():
    g, slab, L, prob = flat_problem(n=8, mz=64)
    U, _ = solve_psor(prob, omega="auto")
    e_star = energy_EM(U, prob)
    rng = np.random.default_rng(3)
    z = slab.z_nodes()
    bump_profile = np.sin(np.pi * (z + slab.M) / (2 * slab.M))[:, None]
    for _ in range(100):
        pert = rng.uniform(0, 0.3) * bump_profile * \
            (1.0 + 0.5 * np.cos(2 * np.pi * np.arange(8) / 8 + rng.uniform(0, 6)))[None, :]
        V = np.maximum(L.values, U.values + pert)
        V[0] = 0.0
        V[-1] = L.values[-1]
        assert energy_EM(SlabField(slab, V), prob) >= e_star - 1e-12


def test_family_sweep():
    g = TorusGrid(1, 32)
    lam = field_from_modes(g, [(1, 0.2, 0.0)])
    rho = density_from_modes(g, [(2, 0.3, 0.4)])
    z_list = [-0.5, -0.3, -0.1, 0.1, 0.3, 0.6]
    results, quotients = family_sweep(lam, rho, z_list, tol=1e-10)
    assert len(results) == len(z_list) and len(quotients) == len(z_list) - 1
    from epslab.grid import lap_array
    for (u, mask), z in zip(results, z_list):
        obst = np.maximum(lam.values, z)
        G = lap_array(u.values, g.h) + rho.values
        assert (u.values >= obst - 1e-12).all()
        assert G.min() > -1e-9
        assert np.abs(np.minimum(G, u.values - obst)).max() < 1e-9
    # far above the data the constraint dominates: full contact at u = z
    big = family_sweep(lam, rho, [5.0], tol=1e-10)[0][0]
    u5, mask5 = big
    assert np.abs(u5.values - 5.0).max() < 1e-9
    # far below the smallest value of lam, levels stop mattering
    lo = family_sweep(lam, rho, [-5.0, -4.0], tol=1e-10)
    ua, ub = lo[0][0][0].values, lo[0][1][0].values
    assert np.abs(ua - ub).max() < 1e-9
