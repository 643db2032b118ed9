"""Rosenbrock time stepping for semilinear parabolic stochastic transport
problems on P1 finite elements, with baseline integrators and a Monte Carlo
strong-convergence harness."""

from .mesh_fem import (
    BilinearFormSpec,
    Mesh,
    OperatorPair,
    assemble_advection,
    assemble_mass,
    assemble_operator,
    assemble_stiffness,
    build_structured_mesh,
    compose_operator,
    estimate_coercivity_shift,
    l2_norm,
    l2_project,
)
from .noise import (
    EigenfunctionTable,
    NoisePath,
    NoiseSpec,
    build_eigenfunction_table,
    coarsen,
    covariance_eigenvalue,
    increment_field,
    sample_path,
)
from .operators import (
    DiffusionSpec,
    DriftSpec,
    LinearizedSystem,
    apply_diffusion,
    build_linearized_system,
    eval_drift,
    eval_drift_jacobian,
    eval_remainder,
    make_diffusion,
    make_drift,
)
from .linsolve import (
    BreakdownError,
    FactorizationError,
    Ilu0Preconditioner,
    SolveReport,
    bicgstab,
    dense_solve,
    ilu0,
)
from .integrators import (
    SCHEMES,
    SchemeConfig,
    StepWorkspace,
    Trajectory,
    explicit_em_step,
    expo_rosenbrock_step,
    integrate,
    rosenbrock_step,
    scalar_stability_sweep,
    semi_implicit_step,
)
from .darcy import (
    PermeabilityField,
    PermeabilitySpec,
    VelocityField,
    generate_permeability,
    solve_pressure,
    velocity_from_pressure,
)
from .problem import Problem, ProblemConfig, VelocityConfig, build_problem
from .harness import (
    ConvergenceReport,
    StudyConfig,
    fit_order,
    run_study,
    timing_profile,
)

__version__ = "0.1.0"
