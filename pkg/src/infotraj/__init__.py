"""Information-optimal vehicle trajectory planning.

Solves a Hamilton-Jacobi PDE for the maximal-information-gain value function
with a hybrid method of lines (spatial grid over the vehicle state, grid-free
ODE for the gradient with respect to the accumulated Fisher information), and
extracts optimal trajectories through the characteristic system.
"""

from infotraj.dynamics import (
    AugmentedState,
    CascadeSystem,
    ControlSignal,
    DubinsCar,
    State,
    ToyCascade,
    Trajectory,
    evaluate_cost,
    evaluate_gain,
    simulate_open_loop,
    trajectory_from_csv,
    trajectory_to_csv,
    wrap_angle,
)
from infotraj.grid import Axis, ExtrapolationError, GridSpec, ScalarField, VectorField
from infotraj.hjsolver import (
    Adjoint,
    ClassicSolution,
    HybridSolution,
    InstabilityError,
    SolverConfig,
    cfl_dt,
    classic_solve,
    dissipation_coeffs,
    hamiltonian,
    hybrid_solve,
    info_rate_on_grid,
    lf_hamiltonian,
    load_solution,
    optimal_hamiltonian,
    policy,
    rx_term,
    save_solution,
)
from infotraj.matrixcore import (
    DimensionError,
    LogDetMetric,
    NotPositiveDefiniteError,
    TerminalMetric,
    curvature_contraction,
    info_matrix,
    logdet_spd,
    unvec,
    vec,
)
from infotraj.sensing import (
    DopplerSensor,
    GaussianPrior,
    GeometryError,
    Sensor,
    conditional_fim,
    doppler_jacobian,
    doppler_mean,
    expected_fim,
    prior_fim,
    suite_fim,
    suite_info_rate,
)
from infotraj.trajectories import (
    BoundaryExitError,
    ValidationReport,
    brute_force_value,
    extract_characteristic,
    extract_receding,
    gradient_consistency_check,
    validate,
)

__all__ = [
    "Adjoint",
    "AugmentedState",
    "Axis",
    "BoundaryExitError",
    "CascadeSystem",
    "ClassicSolution",
    "ControlSignal",
    "DimensionError",
    "DopplerSensor",
    "DubinsCar",
    "ExtrapolationError",
    "GaussianPrior",
    "GeometryError",
    "GridSpec",
    "HybridSolution",
    "InstabilityError",
    "LogDetMetric",
    "NotPositiveDefiniteError",
    "ScalarField",
    "Sensor",
    "SolverConfig",
    "State",
    "TerminalMetric",
    "ToyCascade",
    "Trajectory",
    "ValidationReport",
    "VectorField",
    "brute_force_value",
    "cfl_dt",
    "classic_solve",
    "conditional_fim",
    "curvature_contraction",
    "dissipation_coeffs",
    "doppler_jacobian",
    "doppler_mean",
    "evaluate_cost",
    "evaluate_gain",
    "expected_fim",
    "extract_characteristic",
    "extract_receding",
    "gradient_consistency_check",
    "hamiltonian",
    "hybrid_solve",
    "info_matrix",
    "info_rate_on_grid",
    "lf_hamiltonian",
    "load_solution",
    "logdet_spd",
    "optimal_hamiltonian",
    "policy",
    "prior_fim",
    "rx_term",
    "save_solution",
    "simulate_open_loop",
    "suite_fim",
    "suite_info_rate",
    "trajectory_from_csv",
    "trajectory_to_csv",
    "unvec",
    "validate",
    "vec",
    "wrap_angle",
]

__version__ = "0.1.0"
