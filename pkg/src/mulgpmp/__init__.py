"""Multi-agent trajectory optimization with Gaussian-process priors on factor graphs."""

from .environment import (
    GridPath,
    NoPathError,
    OccupancyGrid,
    SignedDistanceField,
    astar_path,
    compute_sdf,
    load_map,
    path_to_trajectory,
    save_map,
    sdf_query,
)
from .factors import NoiseWeights, anchor_factor, interpolated_factor, mutual_factor, static_factor
from .gp_prior import (
    ConstantVelocityModel,
    NumericalError,
    PriorMean,
    SupportTrajectory,
    assemble_inverse_kernel,
    interp_coeffs,
    interpolate,
)
from .graph_solver import FactorGraph, JointTrajectory, SolverConfig, SolveStats, build_graph, optimize
from .io import load_scenario, render_svg, save_scenario, write_result
from .scenarios import (
    Agent,
    RunResult,
    Scenario,
    ScenarioValidationError,
    benchmark,
    check_collision_free,
    formation_permutations,
    hallway_scenario,
    run_joint,
    run_sequential_baseline,
)

__version__ = "0.1.0"
