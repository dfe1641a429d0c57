"""Batch driver: scenario configs in, report plus plot-ready tables out.

Usage:  epslab run CONFIG.json [--out DIR] [--seed N] [--threads N]

The config is a single JSON object with a `kind` key selecting the scenario
and scenario-specific sections; unknown keys are rejected. Smooth data is
specified by Fourier-mode recipes (lists of [k, amplitude, phase] with the
amplitude acting on the density), matrices as {"re": [[...]], "im": [[...]]}.
Every scenario re-checks the invariants of the modules it drives and the
exit code reflects them: 0 all checks passed, 1 solver failure or failed
check, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import errors
from .grid import ScalarField, TorusGrid, integrate_array, lap_array
from .space_h import (PathInH, Potential, TrajectoryState, action,
                      conserved_quantity, forward_flow, sectional_curvature)
from .phi import NewtonOptions, PhiProblem, hessian_quadratic_min, q_operator, solve_dirichlet
from .obstacle import (ObstacleProblem, SlabGrid, active_set,
                       complementarity_residual, energy_EM, family_sweep,
                       obstacle_L, solve_psor)
from .transforms import (check_level_identities, legendre_phi_to_u,
                         theta_level_sets, theta_to_phi, u_to_theta)
from .nahm import (NahmState, action_h, integrate_nahm, reconstruct_nahm,
                   solve_bvp, spectral_invariants, symmetric_space_geodesic)
from .recipes import density_from_modes, field_from_modes, potential_from_modes, random_modes

KINDS = ("solve-phi", "solve-obstacle", "roundtrip", "geodesic", "curvature",
         "conserve", "nahm-forward", "nahm-bvp", "sweep-j")


class ConfigError(Exception):
    pass


def _require_keys(section: dict, allowed: set, where: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def _grid_from(cfg) -> TorusGrid:
    sec = cfg.get("grid", {})
    _require_keys(sec, {"d", "n"}, "grid")
    return TorusGrid(int(sec.get("d", 1)), int(sec.get("n", 64)))


def _matrix_from(sec) -> np.ndarray:
    re = np.asarray(sec["re"], dtype=float)
    im = np.asarray(sec.get("im", np.zeros_like(re)), dtype=float)
    return re + 1j * im


def _write_table(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


def _field_rows(grid: TorusGrid, axis_name, axis_vals, fields):
    """Rows (x1[,x2], axis, value) for a stack of fields over axis_vals."""
    coords = [np.arange(grid.n) * grid.h for _ in range(grid.d)]
    rows = []
    for j, av in enumerate(axis_vals):
        for ix in np.ndindex(grid.shape):
            point = [float(coords[a][ix[a]]) for a in range(grid.d)]
            rows.append(point + [float(av), float(fields[j][ix])])
    return rows


def _phi_data(cfg, grid):
    sec = cfg.get("data", {})
    phi0 = potential_from_modes(grid, sec["phi0_modes"])
    phi1 = potential_from_modes(grid, sec["phi1_modes"])
    return phi0, phi1


def run_solve_phi(cfg, out: Path, rng):
    _require_keys(cfg, {"kind", "grid", "m", "eps", "data", "solver", "seed"}, "config")
    _require_keys(cfg.get("data", {}), {"phi0_modes", "phi1_modes"}, "data")
    grid = _grid_from(cfg)
    phi0, phi1 = _phi_data(cfg, grid)
    solver = cfg.get("solver", {})
    _require_keys(solver, {"tol", "max_iter"}, "solver")
    newton = NewtonOptions(tol=float(solver.get("tol", 1e-9)),
                           max_iter=int(solver.get("max_iter", 40)))
    prob = PhiProblem(phi0, phi1, float(cfg["eps"]), int(cfg["m"]), newton)
    path = solve_dirichlet(prob)
    res = float(np.abs(q_operator(path) - prob.eps).max())
    qmin = hessian_quadratic_min(path)
    checks = {
        "residual_below_tol": res <= newton.tol,
        "strictly_convex_in_t": qmin > 0.0,
    }
    report = {"residual": res, "hessian_quadratic_min": qmin,
              "action": action(path, prob.eps), "checks": checks}
    _write_table(out / "phi.csv",
                 [f"x{a+1}" for a in range(grid.d)] + ["t", "value"],
                 _field_rows(grid, "t", path.times(), path.values))
    return report, all(checks.values())


def _obstacle_setup(cfg, grid):
    sec = cfg.get("data", {})
    phi0 = potential_from_modes(grid, sec["phi0_modes"])
    phi1 = potential_from_modes(grid, sec["phi1_modes"])
    slab_sec = cfg.get("slab", {})
    _require_keys(slab_sec, {"M", "m_z"}, "slab")
    slab = SlabGrid(grid, float(slab_sec.get("M", 1.0)), int(slab_sec.get("m_z", 128)))
    L = obstacle_L(phi0, phi1, slab)
    rho0 = ScalarField(grid, phi0.density())
    return phi0, phi1, slab, L, rho0


def run_solve_obstacle(cfg, out: Path, rng):
    _require_keys(cfg, {"kind", "grid", "eps", "slab", "data", "solver", "seed"}, "config")
    _require_keys(cfg.get("data", {}), {"phi0_modes", "phi1_modes"}, "data")
    grid = _grid_from(cfg)
    phi0, phi1, slab, L, rho0 = _obstacle_setup(cfg, grid)
    solver = cfg.get("solver", {})
    _require_keys(solver, {"omega", "tol", "max_sweeps"}, "solver")
    prob = ObstacleProblem(L, rho0, float(cfg["eps"]))
    U, info = solve_psor(prob, omega=solver.get("omega", "auto"),
                         tol=float(solver.get("tol", 1e-10)),
                         max_sweeps=int(solver.get("max_sweeps", 200_000)))
    comp, gmin = complementarity_residual(U.values, L.values, rho0.values,
                                          prob.eps, slab.k, grid.h)
    mask, H0, H1 = active_set(U, L, tol=3.0 * slab.k**2)
    checks = {
        "complementarity": comp <= 10 * info.residual + 1e-12,
        "one_sided_residual": gmin >= -10 * info.residual - 1e-12,
        "obstacle_respected": bool((U.values >= L.values - 1e-12).all()),
    }
    report = {"sweeps": info.sweeps, "residual": info.residual,
              "omega": info.omega, "energy": energy_EM(U, prob),
              "checks": checks}
    _write_table(out / "obstacle_u.csv",
                 [f"x{a+1}" for a in range(grid.d)] + ["z", "value"],
                 _field_rows(grid, "z", slab.z_nodes(), U.values))
    _write_table(out / "free_boundary.csv",
                 [f"x{a+1}" for a in range(grid.d)] + ["H0", "H1"],
                 [[float((np.arange(grid.n) * grid.h)[ix[a]]) for a in range(grid.d)]
                  + [float(H0.values[ix]), float(H1.values[ix])]
                  for ix in np.ndindex(grid.shape)])
    return report, all(checks.values())


def run_roundtrip(cfg, out: Path, rng):
    _require_keys(cfg, {"kind", "grid", "m", "eps", "slab", "data", "solver",
                        "seed", "tolerances"}, "config")
    grid = _grid_from(cfg)
    phi0, phi1, slab, L, rho0 = _obstacle_setup(cfg, grid)
    eps = float(cfg["eps"])
    m = int(cfg["m"])
    newton = NewtonOptions()
    path = solve_dirichlet(PhiProblem(phi0, phi1, eps, m, newton))
    U_leg = legendre_phi_to_u(path, slab)
    prob = ObstacleProblem(L, rho0, eps)
    U_ps, info = solve_psor(prob, omega="auto")
    mask, H0, H1 = active_set(U_ps, L, tol=3.0 * slab.k**2)
    theta = u_to_theta(U_ps, mask)
    levels = theta_level_sets(theta, mask, m)
    path_back = theta_to_phi(levels, rho0)
    shift = integrate_array(phi0.field.values, grid.h)
    tolerances = cfg.get("tolerances", {})
    _require_keys(tolerances, {"solver_agreement", "roundtrip"}, "tolerances")
    tol_agree = float(tolerances.get("solver_agreement", 5e-3))
    tol_round = float(tolerances.get("roundtrip", 1e-2))
    err_agree = float(np.abs(U_leg.values - U_ps.values).max())
    err_round = float(np.abs(path_back.values - (path.values - shift)).max())
    idres = check_level_identities(U_ps, theta, levels, path_back, eps, mask)
    checks = {
        "solvers_agree": err_agree <= tol_agree,
        "roundtrip_recovers_path": err_round <= tol_round,
    }
    report = {"solver_agreement": err_agree, "roundtrip_error": err_round,
              "identities": idres, "checks": checks}
    _write_table(out / "roundtrip_errors.csv", ["quantity", "value"],
                 [["solver_agreement", err_agree],
                  ["roundtrip_error", err_round]]
                 + [[f"identity_{k}", float(v)] for k, v in idres.items()])
    return report, all(checks.values())


def run_geodesic(cfg, out: Path, rng):
    _require_keys(cfg, {"kind", "grid", "eps", "data", "flow", "seed"}, "config")
    _require_keys(cfg.get("data", {}), {"phi_modes", "phidot_modes"}, "data")
    grid = _grid_from(cfg)
    sec = cfg["data"]
    phi = potential_from_modes(grid, sec["phi_modes"])
    phidot = field_from_modes(grid, sec["phidot_modes"])
    flow = cfg.get("flow", {})
    _require_keys(flow, {"dt", "steps"}, "flow")
    dt = float(flow.get("dt", 1e-3))
    steps = int(flow.get("steps", 100))
    eps = float(cfg["eps"])
    aborted = None
    try:
        states = forward_flow(TrajectoryState(phi, phidot, 0.0), eps, dt, steps)
    except errors.AdmissibilityLost as exc:
        aborted = str(exc)
        states = []
    rows = [[s.t, integrate_array(s.phi.field.values, grid.h), s.phi.density_min()]
            for s in states]
    vvals = np.array([r[1] for r in rows]) if rows else np.array([])
    convex_ok = True
    if vvals.size >= 3:
        second = vvals[2:] - 2 * vvals[1:-1] + vvals[:-2]
        convex_ok = bool(second.min() >= -1e-8)
    checks = {"completed": aborted is None, "potential_convex_along_flow": convex_ok}
    report = {"steps_completed": max(0, len(states) - 1), "aborted": aborted,
              "checks": checks}
    _write_table(out / "flow_trace.csv", ["t", "V", "min_density"], rows)
    return report, all(checks.values())


def run_curvature(cfg, out: Path, rng):
    _require_keys(cfg, {"kind", "grid", "trials", "seed"}, "config")
    grid = _grid_from(cfg)
    if grid.d != 2:
        raise ConfigError("curvature scenario requires d=2")
    trials = int(cfg.get("trials", 100))
    rows = []
    worst = -np.inf
    for i in range(trials):
        phi = potential_from_modes(grid, random_modes(rng, grid, 3, 3, 0.3))
        alpha = field_from_modes(grid, random_modes(rng, grid, 3, 3, 1.0))
        beta = field_from_modes(grid, random_modes(rng, grid, 3, 3, 1.0))
        K = sectional_curvature(phi, alpha, beta)
        rows.append([i, K])
        worst = max(worst, K)
    checks = {"nonpositive": worst <= 1e-12}
    report = {"trials": trials, "max_K": worst, "checks": checks}
    _write_table(out / "curvature.csv", ["trial", "K"], rows)
    return report, all(checks.values())


def run_conserve(cfg, out: Path, rng):
    _require_keys(cfg, {"kind", "grid", "eps", "data", "flow", "modes",
                        "drift_tol", "seed"}, "config")
    grid = _grid_from(cfg)
    sec = cfg.get("data", {})
    _require_keys(sec, {"phi_modes", "phidot_modes"}, "data")
    phi = potential_from_modes(grid, sec["phi_modes"])
    phidot = field_from_modes(grid, sec["phidot_modes"])
    flow = cfg.get("flow", {})
    _require_keys(flow, {"dt", "steps"}, "flow")
    dt = float(flow.get("dt", 1e-3))
    steps = int(flow.get("steps", 1000))
    eps = float(cfg["eps"])
    modes = [int(k) if grid.d == 1 else tuple(k) for k in cfg.get("modes", [1, 2, 3])]
    drift_tol = float(cfg.get("drift_tol", 1e-6))
    aborted = None
    try:
        states = forward_flow(TrajectoryState(phi, phidot, 0.0), eps, dt, steps)
    except errors.AdmissibilityLost as exc:
        aborted = str(exc)
        states = []
    rows = []
    drifts = {}
    for s in states:
        rows.append([s.t] + [conserved_quantity(s.phi, s.phi_dot, k, eps)
                             for k in modes])
    if rows:
        arr = np.asarray(rows)
        for i, k in enumerate(modes):
            q = arr[:, 1 + i]
            drifts[str(k)] = float(np.abs(q - q[0]).max() / max(1e-300, abs(q[0])))
    ok = aborted is None and all(v < drift_tol for v in drifts.values())
    checks = {"completed": aborted is None,
              "drift_below_tol": bool(drifts) and all(v < drift_tol for v in drifts.values())}
    report = {"aborted": aborted, "relative_drift": drifts, "checks": checks}
    _write_table(out / "conserved.csv",
                 ["t"] + [f"Q_{k}" for k in modes], rows)
    return report, ok


def run_nahm_forward(cfg, out: Path, rng):
    _require_keys(cfg, {"kind", "n", "data", "flow", "drift_tol", "seed"}, "config")
    n = int(cfg.get("n", 2))
    sec = cfg.get("data", {})
    _require_keys(sec, {"amplitude", "T1", "T2", "T3"}, "data")
    if all(k in sec for k in ("T1", "T2", "T3")):
        T = [_matrix_from(sec[f"T{i}"]) for i in (1, 2, 3)]
    else:
        amp = float(sec.get("amplitude", 0.1))
        T = []
        for _ in range(3):
            X = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
            T.append(amp * (X - X.conj().T))
    flow = cfg.get("flow", {})
    _require_keys(flow, {"dt", "t1"}, "flow")
    dt = float(flow.get("dt", 1e-3))
    t1 = float(flow.get("t1", 1.0))
    states = integrate_nahm(NahmState(np.zeros_like(T[0]), *T), (0.0, t1), dt)
    e0 = spectral_invariants(states[0])
    rows = []
    drift = 0.0
    for s in states:
        ev = spectral_invariants(s)
        drift = max(drift, float(np.abs(ev - e0).max()))
        rows.append([s.t] + [v for pair in zip(ev.real, ev.imag) for v in pair])
    rel = drift / max(1e-300, float(np.abs(e0).max()))
    tol = float(cfg.get("drift_tol", 1e-8))
    checks = {"isospectral": rel < tol}
    report = {"relative_drift": rel, "checks": checks}
    hdr = ["t"] + [f"ev{i}_{p}" for i in range(len(e0)) for p in ("re", "im")]
    _write_table(out / "nahm_eigenvalues.csv", hdr, rows)
    return report, all(checks.values())


def run_nahm_bvp(cfg, out: Path, rng):
    _require_keys(cfg, {"kind", "m", "data", "seed"}, "config")
    sec = cfg.get("data", {})
    _require_keys(sec, {"h0", "h1", "B"}, "data")
    h0 = _matrix_from(sec["h0"])
    h1 = _matrix_from(sec["h1"])
    B = _matrix_from(sec["B"])
    m = int(cfg.get("m", 64))
    path, info = solve_bvp(h0, h1, B, m=m)
    states, resid = reconstruct_nahm(path)
    trace = info["action_trace"]
    checks = {"monotone_action": bool(np.all(np.diff(trace) <= 1e-12)),
              "reconstruction_residual_small": resid < 1e-3}
    report = {"iterations": info["iterations"], "grad_norm": info["grad_norm"],
              "action": action_h(path), "reconstruction_residual": resid,
              "checks": checks}
    if np.abs(B).max() == 0.0:
        geo = symmetric_space_geodesic(h0, h1, np.arange(m + 1) / m)
        report["geodesic_error"] = float(np.abs(path.values - geo).max())
    _write_table(out / "bvp_action_trace.csv", ["iteration", "action"],
                 list(enumerate(map(float, trace))))
    return report, all(checks.values())


def run_sweep_j(cfg, out: Path, rng):
    _require_keys(cfg, {"kind", "grid", "data", "z_list", "seed"}, "config")
    grid = _grid_from(cfg)
    sec = cfg.get("data", {})
    _require_keys(sec, {"lambda_modes", "rho_modes"}, "data")
    lam = field_from_modes(grid, sec["lambda_modes"])
    rho = density_from_modes(grid, sec.get("rho_modes", []))
    z_list = [float(z) for z in cfg["z_list"]]
    results, quotients = family_sweep(lam, rho, z_list)
    rows = []
    for z, (u, mask) in zip(z_list, results):
        rows.append([z, float(mask.mean()), float(u.values.min()),
                     float(u.values.max())])
    report = {"difference_quotients": [float(q) for q in quotients],
              "checks": {"all_levels_converged": True}}
    _write_table(out / "sweep_levels.csv",
                 ["z", "contact_fraction", "u_min", "u_max"], rows)
    _write_table(out / "sweep_quotients.csv", ["interval", "quotient"],
                 list(enumerate(map(float, quotients))))
    return report, True


RUNNERS = {
    "solve-phi": run_solve_phi,
    "solve-obstacle": run_solve_obstacle,
    "roundtrip": run_roundtrip,
    "geodesic": run_geodesic,
    "curvature": run_curvature,
    "conserve": run_conserve,
    "nahm-forward": run_nahm_forward,
    "nahm-bvp": run_nahm_bvp,
    "sweep-j": run_sweep_j,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="epslab")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="execute a scenario config")
    runp.add_argument("config", type=Path)
    runp.add_argument("--out", type=Path, default=None)
    runp.add_argument("--seed", type=int, default=None)
    runp.add_argument("--threads", type=int, default=1,
                      help="recorded in the report; kernels here are single-threaded")
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return 2

    out = args.out if args.out is not None else args.config.parent
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output dir: {exc}", file=sys.stderr)
        return 1

    kind = cfg.get("kind")
    if kind not in KINDS:
        print(f"error: kind must be one of {KINDS}, got {kind!r}", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    rng = np.random.default_rng(seed)

    try:
        report, ok = RUNNERS[kind](cfg, out, rng)
    except (ConfigError, KeyError, errors.NotNormalized, errors.NotPositive) as exc:
        print(f"error: invalid configuration: {exc!r}", file=sys.stderr)
        return 2
    except errors.EpslabError as exc:
        diag = {"kind": kind, "seed": seed, "failure": type(exc).__name__,
                "message": str(exc)}
        with open(out / "report.json", "w") as fh:
            json.dump(diag, fh, indent=2, sort_keys=True)
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1

    report = {"kind": kind, "seed": seed, "threads": args.threads, **report}
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    summary = " ".join(f"{k}={v}" for k, v in report.get("checks", {}).items())
    print(f"{kind}: {'ok' if ok else 'FAILED'} {summary}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
