"""2D lidar scan matching toolkit.

ICET scan matching with online covariance prediction and geometric
ambiguity suppression, an NDT baseline, a raycasting simulator, and a
Monte-Carlo benchmark harness.
"""

from .errors import DomainError
from .geometry import (
    Point2,
    ReducedCovariance,
    Scan,
    StateCovariance,
    StateVector,
    apply_transform,
    inverse_transform,
    load_scan_csv,
    normalize_angle,
    save_scan_csv,
    transform_scan,
)
from .voxels import (
    Correspondence,
    GridConfig,
    PruneResult,
    VoxelStats,
    build_grid,
    correspond,
    eigen_prune,
    grid_debug_dump,
)
from .solver import (
    IcetConfig,
    IcetSolution,
    MeasurementBlock,
    accumulate_normal_equations,
    icet_match,
    jacobian_block,
    noise_block,
    reduce_block,
    solution_to_dict,
    solve_step,
)
from .ndt import NdtConfig, NdtDiagnostics, ndt_match, ndt_score, ndt_solution_to_dict
from .simulator import (
    Environment,
    ScanSpec,
    TrialSpec,
    build_environment,
    fit_rigid_transform,
    generate_trial_pair,
    raycast_scan,
    sensor_pose_for_transform,
)
from .benchmark import (
    McReport,
    ScenarioConfig,
    TrialRecord,
    consistency_check,
    error_statistics,
    run_monte_carlo,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "Point2",
    "StateVector",
    "Scan",
    "StateCovariance",
    "ReducedCovariance",
    "apply_transform",
    "transform_scan",
    "inverse_transform",
    "normalize_angle",
    "save_scan_csv",
    "load_scan_csv",
    "GridConfig",
    "VoxelStats",
    "PruneResult",
    "Correspondence",
    "build_grid",
    "eigen_prune",
    "correspond",
    "grid_debug_dump",
    "IcetConfig",
    "IcetSolution",
    "MeasurementBlock",
    "jacobian_block",
    "noise_block",
    "reduce_block",
    "accumulate_normal_equations",
    "solve_step",
    "icet_match",
    "solution_to_dict",
    "NdtConfig",
    "NdtDiagnostics",
    "ndt_score",
    "ndt_match",
    "ndt_solution_to_dict",
    "Environment",
    "ScanSpec",
    "TrialSpec",
    "build_environment",
    "raycast_scan",
    "generate_trial_pair",
    "sensor_pose_for_transform",
    "fit_rigid_transform",
    "ScenarioConfig",
    "TrialRecord",
    "McReport",
    "run_monte_carlo",
    "error_statistics",
    "consistency_check",
]
