"""Chambolle-Pock primal-dual iteration for the congested transport problem.

The affine constraints are dualized through multiplier fields: one for mass
conservation ``Kx = y`` and, in the collocated layout, one for the node /
interval density tie ``u = B rho + h``.  The primal update is the pointwise
kinetic + congestion prox on the interval fields.  Since the dualized
indicators' conjugate prox is the identity (shifted by the right-hand side),
the dual step is a plain gradient ascent on the residuals.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .continuity import (
    ContinuityProjector,
    ContinuityRhs,
    IntervalCoupling,
    interior_adjoint,
    interior_divergence,
)
from .diagram import max_violation
from .grid import (
    COLLOCATED,
    Grid,
    TransportState,
    estimate_operator_norm,
    field_norm,
    midpoint_average,
    state_dot,
    state_norm,
)
from .problems import ProblemSpec
from .prox import apply_obstacle, objective, prox_kinetic_fd_field
from .solver_drs import (
    ConvergenceRecord,
    SolverConfig,
    _Monitor,
    check_problem,
    finalize,
    initialize,
)

Array = np.ndarray


@dataclass
class CpState:
    """Primal/dual iterates and the validated step sizes of one run."""

    x: TransportState
    x_bar: TransportState
    phi: Array
    tau: float
    sigma: float
    phi_i: Array | None = None   # coupling multiplier (collocated only)


def _stacked_norm(grid: Grid, iters: int, seed: int = 0,
                  inflation: float = 0.01) -> float:
    """Power-iteration norm of the stacked constraint operator (collocated).

    The operator maps ``(rho, u, m)`` to the pair of residual fields
    (divergence rows, coupling rows); the homogeneous coupling map is
    realized by an :class:`IntervalCoupling` with zero marginals.
    """
    rng = np.random.default_rng(seed)
    zero = np.zeros(grid.N)
    coup = IntervalCoupling(zero, zero, grid)
    x = TransportState.zeros(grid, COLLOCATED)
    x.rho[:] = rng.standard_normal(x.rho.shape)
    x.u[:] = rng.standard_normal(x.u.shape)
    x.m[:] = rng.standard_normal(x.m.shape)
    best = 0.0
    for _ in range(iters):
        nx = state_norm(x, grid)
        if nx == 0.0:
            break
        x = x * (1.0 / nx)
        kc = interior_divergence(x, grid)
        ki = coup.residual(x)
        best = max(best, np.hypot(field_norm(kc, grid), field_norm(ki, grid)))
        x = interior_adjoint(kc, grid, COLLOCATED) + coup.apply_adjoint(ki)
    return best * (1.0 + inflation)


def initialize_cp(problem: ProblemSpec, config: SolverConfig,
                  norm_K: float | None = None) -> CpState:
    """Build the starting state; rejects steps violating tau*sigma*||K||^2 < 1."""
    g = problem.grid
    if norm_K is None:
        if problem.layout == COLLOCATED:
            norm_K = _stacked_norm(g, 30, seed=config.seed)
        else:
            norm_K = estimate_operator_norm(g, 30, problem.layout, seed=config.seed)
    tau = config.tau if config.tau is not None else 0.95 / norm_K
    sigma = config.sigma if config.sigma is not None else 0.95 / norm_K
    if tau <= 0 or sigma <= 0:
        raise ValueError("steps must be positive")
    if tau * sigma * norm_K**2 >= 1.0:
        raise ValueError(
            f"step condition violated: tau*sigma*||K||^2 = {tau * sigma * norm_K**2:.4g} >= 1"
        )
    x0 = initialize(problem)
    phi = np.zeros(g.div_shape(problem.layout))
    phi_i = np.zeros((g.P, *g.N)) if problem.layout == COLLOCATED else None
    return CpState(x0, x0.copy(), phi, tau, sigma, phi_i)


def cp_step(state: CpState, problem: ProblemSpec, rhs: ContinuityRhs,
            coupling: IntervalCoupling | None = None) -> CpState:
    """One primal-dual iteration (dual ascent, prox descent, extrapolation)."""
    g = problem.grid
    state.phi = state.phi + state.sigma * (
        interior_divergence(state.x_bar, g) - rhs.y)
    corr = interior_adjoint(state.phi, g, problem.layout)
    if coupling is not None:
        state.phi_i = state.phi_i + state.sigma * coupling.residual(state.x_bar)
        corr = corr + coupling.apply_adjoint(state.phi_i)
    v = state.x - corr * state.tau
    x_new = prox_kinetic_fd_field(v, g, state.tau, problem.diagram)
    if problem.mask is not None:
        x_new = apply_obstacle(x_new, problem.mask, g)
        x_new.rho[0] = problem.mu
        x_new.rho[-1] = problem.nu
    state.x_bar = x_new * 2.0 - state.x
    state.x = x_new
    return state


def run_cp(problem: ProblemSpec, config: SolverConfig | None = None):
    """Iterate Chambolle-Pock to convergence.

    Returns ``(solution, records)``; each record also carries the running
    ergodic (averaged-iterate) objective.
    """
    config = config or SolverConfig()
    check_problem(problem)
    g = problem.grid
    rhs = ContinuityRhs.from_marginals(problem.mu, problem.nu, g, problem.layout)
    projector = ContinuityProjector(g, problem.layout)
    coupling = (IntervalCoupling(problem.mu, problem.nu, g)
                if problem.layout == COLLOCATED else None)
    state = initialize_cp(problem, config)
    monitor = _Monitor(config)
    records: list[ConvergenceRecord] = []
    erg_sum = state.x.copy() * 0.0
    t0 = time.perf_counter()
    for it in range(1, config.max_iters + 1):
        prev = state.x
        state = cp_step(state, problem, rhs, coupling)
        erg_sum = erg_sum + state.x
        obj = objective(state.x, g, surrogate=problem.layout == COLLOCATED)
        cr = field_norm(interior_divergence(state.x, g) - rhs.y, g)
        if coupling is not None:
            cr = float(np.hypot(cr, field_norm(coupling.residual(state.x), g)))
        xc = state.x if state.x.layout == COLLOCATED else midpoint_average(state.x, g)
        fv = max_violation(problem.diagram, xc)
        step = state_norm(state.x - prev, g)
        done = monitor.update(obj, cr, fv)
        if it % config.log_every == 0 or done or it == config.max_iters:
            erg_obj = objective(erg_sum * (1.0 / it), g)
            records.append(ConvergenceRecord(
                it, obj, cr, fv, step, time.perf_counter() - t0, erg_obj))
        if done:
            break
    solution = finalize(state.x, problem, projector, rhs)
    return solution, records
