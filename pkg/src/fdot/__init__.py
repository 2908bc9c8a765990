"""Dynamic optimal transport under fundamental-diagram congestion constraints."""

__version__ = "0.1.0"

from .diagram import DiagramField, FundamentalDiagram, max_violation, project_fd
from .grid import (
    COLLOCATED,
    STAGGERED,
    DualField,
    Grid,
    TransportState,
    adjoint_divergence,
    divergence,
    estimate_operator_norm,
    midpoint_average,
)
from .continuity import (
    ContinuityProjector,
    ContinuityRhs,
    continuity_residual,
    project_continuity,
    solve_poisson,
)
from .problems import (
    ProblemSpec,
    gaussian_1d,
    gaussian_2d,
    toll_gate_mask,
    validate,
)
from .prox import (
    ObstacleMask,
    apply_obstacle,
    objective,
    prox_kinetic,
    prox_kinetic_fd,
)
from .solver_cp import CpState, cp_step, run_cp
from .solver_drs import (
    ConvergenceRecord,
    DrsState,
    SolverConfig,
    SolverDivergence,
    drs_step,
    initialize,
    run_drs,
)

__all__ = [
    "COLLOCATED",
    "STAGGERED",
    "ContinuityProjector",
    "ContinuityRhs",
    "ConvergenceRecord",
    "CpState",
    "DiagramField",
    "DrsState",
    "DualField",
    "FundamentalDiagram",
    "Grid",
    "ObstacleMask",
    "ProblemSpec",
    "SolverConfig",
    "SolverDivergence",
    "TransportState",
    "adjoint_divergence",
    "apply_obstacle",
    "continuity_residual",
    "cp_step",
    "divergence",
    "drs_step",
    "estimate_operator_norm",
    "gaussian_1d",
    "gaussian_2d",
    "initialize",
    "max_violation",
    "midpoint_average",
    "objective",
    "project_continuity",
    "project_fd",
    "prox_kinetic",
    "prox_kinetic_fd",
    "run_cp",
    "run_drs",
    "solve_poisson",
    "toll_gate_mask",
    "validate",
]
