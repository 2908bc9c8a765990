"""Consensus Douglas-Rachford splitting over {kinetic, continuity, congestion}.

Each constraint/energy term owns a copy ``z_b`` of the transport state.  One
iteration forms the consensus average ``x_bar``, applies every block operator
to the reflection ``2 x_bar - z_b``, and moves each copy by the block result
minus the average.  Obstacle masking joins as an optional fourth block.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .continuity import (
    ContinuityProjector,
    ContinuityRhs,
    IntervalCoupling,
    continuity_residual,
)
from .diagram import max_violation
from .grid import (
    COLLOCATED,
    STAGGERED,
    Grid,
    TransportState,
    field_norm,
    midpoint_average,
    state_norm,
)
from .problems import ProblemSpec, validate
from .prox import apply_obstacle, objective, project_fd_field, prox_kinetic_field

Array = np.ndarray


class SolverDivergence(RuntimeError):
    """The iteration produced non-finite values or a runaway objective."""


@dataclass
class SolverConfig:
    """Iteration limits, tolerances and step sizes shared by both solvers."""

    max_iters: int = 5000
    tol_obj: float = 1e-7
    tol_feas: float = 1e-6
    alpha: float = 1.0           # DRS kinetic-prox step
    log_every: int = 1
    seed: int = 0
    tau: float | None = None     # primal-dual steps; default 0.95/||K||
    sigma: float | None = None

    def __post_init__(self):
        if self.max_iters < 1 or self.log_every < 1:
            raise ValueError("max_iters and log_every must be >= 1")
        if min(self.tol_obj, self.tol_feas) <= 0 or self.alpha <= 0:
            raise ValueError("tolerances and alpha must be positive")


@dataclass
class ConvergenceRecord:
    iter: int
    objective: float
    continuity_residual: float
    fd_violation: float
    step_change: float
    elapsed: float
    ergodic_objective: float | None = None


@dataclass
class DrsState:
    """Block copies and the consensus average of one DRS run."""

    z: list[TransportState]
    blocks: list[str]
    x_bar: TransportState
    alpha: float
    x_kin: TransportState | None = None  # latest kinetic-prox output


def _mean_state(states: list[TransportState]) -> TransportState:
    acc = states[0].copy()
    for s in states[1:]:
        acc = acc + s
    return acc * (1.0 / len(states))


def check_problem(problem: ProblemSpec) -> None:
    """Raise on validation errors; surface warnings without stopping."""
    for d in validate(problem):
        if d.level == "error":
            raise ValueError(f"invalid problem: {d.message}")
        warnings.warn(d.message)


def initialize(problem: ProblemSpec) -> TransportState:
    """Linear density interpolation between the marginals with zero momentum."""
    g = problem.grid
    x = TransportState.zeros(g, problem.layout)
    T = x.rho.shape[0]
    for k in range(T):
        if problem.layout == COLLOCATED:
            t = k / g.P
        else:
            t = 0.0 if k == 0 else (1.0 if k == T - 1 else (k - 0.5) / g.P)
        x.rho[k] = (1.0 - t) * problem.mu + t * problem.nu
    if problem.layout == COLLOCATED:
        x.u[:] = 0.5 * (x.rho[:-1] + x.rho[1:])
    if problem.mask is not None:
        x = apply_obstacle(x, problem.mask, g)
        x.rho[0] = problem.mu
        x.rho[-1] = problem.nu
    return x


def initialize_drs(problem: ProblemSpec, config: SolverConfig) -> DrsState:
    x0 = initialize(problem)
    blocks = ["kinetic", "continuity", "congestion"]
    if problem.layout == COLLOCATED:
        blocks.append("coupling")
    if problem.mask is not None:
        blocks.append("obstacle")
    z = [x0.copy() for _ in blocks]
    return DrsState(z, blocks, _mean_state(z), config.alpha)


def _diagnose(x: TransportState, problem: ProblemSpec, rhs: ContinuityRhs,
              coupling: IntervalCoupling | None):
    """Feasibility diagnostics: combined affine residual and cap violation."""
    g = problem.grid
    cr = continuity_residual(x, rhs, g)
    if coupling is not None and x.layout == COLLOCATED:
        cr = float(np.hypot(cr, field_norm(coupling.residual(x), g)))
    xc = x if x.layout == COLLOCATED else midpoint_average(x, g)
    fv = max_violation(problem.diagram, xc)
    return cr, fv


def drs_step(state: DrsState, problem: ProblemSpec,
             projector: ContinuityProjector, rhs: ContinuityRhs,
             coupling: IntervalCoupling | None = None) -> DrsState:
    """One consensus iteration; returns the state with updated copies/average."""
    g = problem.grid
    x_bar = state.x_bar
    new_z = []
    for name, z_b in zip(state.blocks, state.z):
        refl = x_bar * 2.0 - z_b
        if name == "kinetic":
            x_b = prox_kinetic_field(refl, g, state.alpha)
            state.x_kin = x_b
        elif name == "continuity":
            x_b = projector.project(refl, rhs)
        elif name == "congestion":
            x_b = project_fd_field(refl, g, problem.diagram)
        elif name == "coupling":
            x_b = coupling.project(refl)
        else:
            x_b = apply_obstacle(refl, problem.mask, g)
        new_z.append(z_b + x_b - x_bar)
    state.z = new_z
    state.x_bar = _mean_state(new_z)
    return state


def finalize(x: TransportState, problem: ProblemSpec,
             projector: ContinuityProjector, rhs: ContinuityRhs,
             tol: float = 1e-8, max_sweeps: int = 100) -> TransportState:
    """Reporting representative: alternate the congestion and continuity
    projections until both residuals are negligible, ending with the exact
    mass-conservation projection.  Obstacle cells are re-zeroed last when a
    mask is present."""
    g = problem.grid
    out = x
    for _ in range(max_sweeps):
        out = project_fd_field(out, g, problem.diagram)
        if problem.mask is not None:
            out = apply_obstacle(out, problem.mask, g)
        out = projector.project(out, rhs)
        xc = out if out.layout == COLLOCATED else midpoint_average(out, g)
        spill = 0.0
        if problem.mask is not None:
            blocked = ~problem.mask.free_at(g, 0)
            spill = float(np.abs(out.rho[:, blocked]).sum(axis=-1).max())
        if max_violation(problem.diagram, xc) <= tol and spill <= tol:
            break
    if problem.mask is not None:
        out = apply_obstacle(out, problem.mask, g)
        out.rho[0] = problem.mu
        out.rho[-1] = problem.nu
    return out


class _Monitor:
    """Shared termination/guard logic for both solvers."""

    def __init__(self, config: SolverConfig):
        self.config = config
        self.window: list[float] = []
        self.initial_obj: float | None = None

    def update(self, obj: float, cr: float, fv: float) -> bool:
        if not np.isfinite(obj) or not np.isfinite(cr):
            raise SolverDivergence("non-finite iterate")
        if self.initial_obj is None:
            self.initial_obj = max(abs(obj), 1.0)
        elif obj > 1e6 * self.initial_obj:
            raise SolverDivergence("objective grew by more than 1e6x")
        self.window.append(obj)
        if len(self.window) > 10:
            self.window.pop(0)
        if len(self.window) < 10:
            return False
        spread = max(self.window) - min(self.window)
        rel = spread / max(abs(self.window[-1]), 1e-300)
        c = self.config
        return rel <= c.tol_obj and cr <= c.tol_feas and fv <= c.tol_feas


def run_drs(problem: ProblemSpec, config: SolverConfig | None = None):
    """Iterate Douglas-Rachford to convergence.

    Returns ``(solution, records)``: the consensus average after a final
    congestion + continuity projection, and the per-iteration log.
    """
    config = config or SolverConfig()
    check_problem(problem)
    g = problem.grid
    rhs = ContinuityRhs.from_marginals(problem.mu, problem.nu, g, problem.layout)
    projector = ContinuityProjector(g, problem.layout)
    coupling = (IntervalCoupling(problem.mu, problem.nu, g)
                if problem.layout == COLLOCATED else None)
    state = initialize_drs(problem, config)
    monitor = _Monitor(config)
    records: list[ConvergenceRecord] = []
    t0 = time.perf_counter()
    for it in range(1, config.max_iters + 1):
        prev = state.x_bar
        state = drs_step(state, problem, projector, rhs, coupling)
        # the kinetic-prox output is clean of dead-cell momentum by
        # construction in the collocated layout; the staggered redistribution
        # is not, so massless cells are excluded there
        obj = objective(state.x_kin, g, surrogate=problem.layout == COLLOCATED)
        cr, fv = _diagnose(state.x_bar, problem, rhs, coupling)
        step = state_norm(state.x_bar - prev, g)
        done = monitor.update(obj, cr, fv)
        if it % config.log_every == 0 or done or it == config.max_iters:
            records.append(ConvergenceRecord(
                it, obj, cr, fv, step, time.perf_counter() - t0))
        if done:
            break
    solution = finalize(state.x_bar, problem, projector, rhs)
    return solution, records
