"""Numerical laboratory for an elliptic free boundary problem on the flat
torus: the time-convex potential equation on X x [0,1], its obstacle-problem
reformulation on a slab, the level-set/flux picture connecting them, the
geometry of the space of admissible potentials, and the finite-dimensional
matrix system they mirror."""

from . import errors
from .grid import (
    ScalarField,
    TorusGrid,
    VectorFieldOnX,
    cross_scalar,
    divergence,
    fourier_eigenpair,
    gradient,
    integrate,
    laplacian,
    skew_gradient,
)
from .space_h import (
    PathInH,
    Potential,
    TrajectoryState,
    action,
    check_vector_identities,
    conserved_quantity,
    covariant_derivative,
    curvature_vector,
    el_residual,
    forward_flow,
    metric_norm_sq,
    sectional_curvature,
)
from .phi import (
    NewtonOptions,
    PhiProblem,
    convexity_report,
    hessian_quadratic_min,
    lorentz_q,
    q_linearization,
    q_operator,
    solve_dirichlet,
)
from .obstacle import (
    ObstacleProblem,
    SlabField,
    SlabGrid,
    active_set,
    energy_EM,
    family_sweep,
    obstacle_L,
    optimal_omega,
    solve_psor,
)
from .transforms import (
    LevelSetFamily,
    check_level_identities,
    flux,
    legendre_phi_to_u,
    poisson_solve,
    theta_level_sets,
    theta_to_phi,
    u_to_theta,
)
from .nahm import (
    BvpOptions,
    HermitianPath,
    NahmState,
    action_h,
    integrate_nahm,
    nahm_rhs,
    reconstruct_nahm,
    solve_bvp,
    spectral_invariants,
    symmetric_space_geodesic,
    vb,
)
from .recipes import (
    density_from_modes,
    field_from_modes,
    potential_from_modes,
    random_modes,
)

__version__ = "0.1.0"
