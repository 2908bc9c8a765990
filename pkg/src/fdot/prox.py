"""Pointwise proximal maps: kinetic energy, kinetic + congestion cap, obstacles.

The kinetic prox minimizes ``(1/2)|(rho,m) - (r,u)|^2 + a |u|^2/(2r)``; its
solution is the largest real root of a cubic.  The combined map adds the
fundamental-diagram constraint set F and falls back to a 1D boundary search
when the unconstrained answer is infeasible.  Field-level wrappers apply the
maps over whole space-time states, holding the pinned marginal slices fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._roots import cubic_real_roots, scan_sign_changes
from .diagram import GREENSHIELDS, DiagramField, FundamentalDiagram, project_fd
from .grid import (
    COLLOCATED,
    STAGGERED,
    Grid,
    TransportState,
    midpoint_average,
    midpoint_average_adjoint,
)

Array = np.ndarray

EPS_RHO = 1e-12
EPS_M = 1e-12


def _as_fields(rho, m):
    """Normalize (rho, m) to arrays with the vector axis leading on m."""
    rho = np.asarray(rho, dtype=float)
    scalar = rho.ndim == 0
    rho = np.atleast_1d(rho)
    m = np.atleast_1d(np.asarray(m, dtype=float))
    if m.shape == rho.shape:
        m = m[None]
    return rho, m, scalar


def prox_kinetic(rho, m, alpha):
    """Proximal map of the kinetic energy ``|m|^2 / (2 rho)`` with step alpha.

    Returns ``(rho~, m~)`` where rho~ is the largest real root of
    ``(t - rho)(alpha + t)^2 = (alpha/2)|m|^2`` and ``m~ = rho~ m/(alpha+rho~)``
    when that root is positive, and ``(0, 0)`` otherwise.
    """
    if np.any(np.asarray(alpha) <= 0):
        raise ValueError("alpha must be positive")
    rho, m, scalar = _as_fields(rho, m)
    a = np.broadcast_to(np.asarray(alpha, dtype=float), rho.shape)
    s2 = np.sum(m * m, axis=0)

    b = 2.0 * a - rho
    c = a * a - 2.0 * a * rho
    d = -rho * a * a - 0.5 * a * s2
    root = np.nanmax(cubic_real_roots(b, c, d), axis=0).reshape(rho.shape)

    pos = root > 0.0
    rho_out = np.where(pos, root, 0.0)
    m_out = np.where(pos[None], m * (rho_out / (a + rho_out))[None], 0.0)
    if scalar:
        return float(rho_out[0]), m_out[:, 0]
    return rho_out, m_out


def prox_kinetic_fixed_rho(rho, m, alpha):
    """Kinetic prox minimized over the momentum only (density held fixed)."""
    rho, m, scalar = _as_fields(rho, m)
    r = np.maximum(rho, 0.0)
    m_out = m * (r / (np.asarray(alpha, dtype=float) + r))[None]
    if scalar:
        return float(rho[0]), m_out[:, 0]
    return rho, m_out


def _capacity_closures(diag, v0, rho_hat):
    if v0 is not None or rho_hat is not None:
        if diag.family != GREENSHIELDS:
            raise ValueError("parameter fields only supported for Greenshields")
        v = np.asarray(diag.v0 if v0 is None else v0, dtype=float)
        rh = np.asarray(diag.rho_hat if rho_hat is None else rho_hat, dtype=float)
        return (lambda t: t * v * (1.0 - t / rh),
                lambda t: v * (1.0 - 2.0 * t / rh), rh, [])
    rh = np.asarray(diag.rho_hat, dtype=float)
    return diag.flux, diag.flux_slope, rh, diag.breakpoints()


def prox_kinetic_fd(rho, m, tau, diag: FundamentalDiagram, v0=None, rho_hat=None):
    """Kinetic prox restricted to the congestion set F.

    Returns the unconstrained :func:`prox_kinetic` output when it lands in F.
    Otherwise the minimizer sits on the capacity curve or at a corner: the
    active-set stationarity equation is solved on each smooth branch of Q and
    the least-objective candidate (curve roots, breakpoints, ``(0,0)``,
    ``(rho_hat, 0)``) is returned with the momentum direction preserved.
    """
    if np.any(np.asarray(tau) <= 0):
        raise ValueError("tau must be positive")
    rho, m, scalar = _as_fields(rho, m)
    Q, Qp, rh_arr, kinks = _capacity_closures(diag, v0, rho_hat)
    rh = np.broadcast_to(rh_arr, rho.shape)
    t_arr = np.broadcast_to(np.asarray(tau, dtype=float), rho.shape)

    r_out, m_out = prox_kinetic(rho, m, t_arr)
    r_out = np.atleast_1d(np.asarray(r_out))
    s_out = np.sqrt(np.sum(m_out * m_out, axis=0))
    bad = (s_out > Q(r_out) + 1e-14) | (r_out > rh)
    if np.any(bad):
        rb, sb = rho[bad], np.sqrt(np.sum(m[:, bad] ** 2, axis=0))
        tb, rhb = t_arr[bad], rh[bad]
        rs, ss = _fd_boundary_minimize(rb, sb, tb, rhb, Q, Qp, kinks)
        scale = np.where(sb > 0, rs * 0 + ss / np.where(sb > 0, sb, 1.0), 0.0)
        r_out[bad] = rs
        for k in range(m.shape[0]):
            m_out[k][bad] = m[k][bad] * scale
    if scalar:
        return float(r_out[0]), m_out[:, 0]
    return r_out, m_out


def _fd_boundary_minimize(rho, s, tau, rh, Q, Qp, kinks):
    """Minimize the prox objective over the boundary of F (vectorized)."""
    eps = 1e-12

    def h(t):
        q = np.maximum(Q(t), 0.0)
        safe = np.maximum(t, eps)
        return 0.5 * (t - rho) ** 2 + 0.5 * (q - s) ** 2 + tau * q * q / (2.0 * safe)

    def g(t):
        q = Q(t)
        return (t - rho) - 0.5 * tau * q * q / t**2 \
            - (s - q * (1.0 + tau / t)) * Qp(t)

    lo_hi = []
    edges = [eps * np.maximum(rh, 1.0)] + [np.full_like(rho, k) for k in kinks] \
        + [rh * (1.0 - 1e-12)]
    for a, b in zip(edges[:-1], edges[1:]):
        lo_hi.append((a, b))

    cand_t = [np.zeros_like(rho), rh.astype(float).copy()]
    cand_t += [np.full_like(rho, k) for k in kinks]
    for lo, hi in lo_hi:
        roots = scan_sign_changes(g, lo, hi, npts=64)
        cand_t.extend([roots[0], roots[1]])
    cand_t = np.stack(cand_t)

    vals = np.where(np.isnan(cand_t), np.inf, h(np.nan_to_num(cand_t)))
    # the t = 0 corner carries no kinetic cost by convention
    vals[0] = 0.5 * rho**2 + 0.5 * s**2
    pick = np.argmin(vals, axis=0)[None]
    tstar = np.take_along_axis(cand_t, pick, 0)[0]
    sstar = np.where(tstar > 0, np.maximum(Q(np.maximum(tstar, eps)), 0.0), 0.0)
    return tstar, sstar


def prox_kinetic_fd_fixed_rho(rho, m, tau, diag_field: DiagramField):
    """Combined prox over the momentum only, density (and its cap) fixed."""
    rho, m, scalar = _as_fields(rho, m)
    s = np.sqrt(np.sum(m * m, axis=0))
    r = np.maximum(rho, 0.0)
    cap = np.maximum(diag_field.flux(np.minimum(r, _rho_hat_of(diag_field))), 0.0)
    s_new = np.minimum(s * r / (r + tau), cap)
    with np.errstate(invalid="ignore"):
        scale = np.where(s > 0, s_new / np.where(s > 0, s, 1.0), 0.0)
    m_out = m * scale[None]
    if scalar:
        return float(rho[0]), m_out[:, 0]
    return rho, m_out


def _rho_hat_of(diag_field: DiagramField):
    if diag_field.rho_hat is not None:
        return np.asarray(diag_field.rho_hat)
    return diag_field.diagram.rho_hat


# ---------------------------------------------------------------------------
# obstacles


@dataclass(frozen=True)
class ObstacleMask:
    """Boolean free-cell field, static ``(*N,)`` or per-time ``(T, *N)``."""

    free: Array

    def __post_init__(self):
        object.__setattr__(self, "free", np.asarray(self.free, dtype=bool))

    @property
    def time_varying(self) -> bool:
        return False  # static masks only; per-time masks reserved

    def free_at(self, grid: Grid, k: int) -> Array:
        f = self.free
        if f.shape == tuple(grid.N):
            return f
        return f[min(k, f.shape[0] - 1)]

    def blocked_fraction(self) -> float:
        return float(1.0 - self.free.mean())


def _face_free(free: Array, axis: int) -> Array:
    """A face is free only if both adjacent cells are free (boundary blocked)."""
    n = free.shape[axis]
    shape = list(free.shape)
    shape[axis] = n + 1
    out = np.zeros(shape, dtype=bool)
    sl = [slice(None)] * free.ndim
    sl[axis] = slice(1, n)
    a = [slice(None)] * free.ndim
    b = [slice(None)] * free.ndim
    a[axis] = slice(0, n - 1)
    b[axis] = slice(1, n)
    out[tuple(sl)] = free[tuple(a)] & free[tuple(b)]
    return out


def apply_obstacle(state: TransportState, mask: ObstacleMask, grid: Grid) -> TransportState:
    """Zero density and momentum on blocked cells (and faces, staggered)."""
    out = state.copy()
    T = out.rho.shape[0]
    for k in range(T):
        free = mask.free_at(grid, k)
        if free.shape != tuple(grid.N):
            raise ValueError("mask shape does not match the grid")
        out.rho[k] = np.where(free, out.rho[k], 0.0)
    if state.layout == COLLOCATED:
        for k in range(out.m.shape[1]):
            free = mask.free_at(grid, k)
            out.m[:, k] = np.where(free[None], out.m[:, k], 0.0)
            out.u[k] = np.where(free, out.u[k], 0.0)
    else:
        for ax in range(grid.d):
            for k in range(out.m[ax].shape[0]):
                ff = _face_free(mask.free_at(grid, k), ax)
                out.m[ax][k] = np.where(ff, out.m[ax][k], 0.0)
    return out


# ---------------------------------------------------------------------------
# objective and field-level wrappers


def objective(state: TransportState, grid: Grid, surrogate: bool = True) -> float:
    """Kinetic energy ``dt * sum_k |m_k|^2 / (2 u_k)`` over the time intervals.

    Cells with vanishing interval density contribute 0 when the momentum
    also vanishes.  With ``surrogate=True`` a vanishing density with
    non-vanishing momentum contributes a large finite penalty (so diverging
    iterates stay plottable in logs); with ``surrogate=False`` such cells
    are reported as 0, which keeps diagnostics meaningful for iterates that
    carry round-off momentum in massless regions.
    """
    if state.layout == STAGGERED:
        state = midpoint_average(state, grid)
    s2 = np.sum(state.m * state.m, axis=0)
    u = state.u
    dead = u <= EPS_RHO
    denom = np.where(dead, EPS_RHO, u)
    zero_out = dead if not surrogate else (dead & (np.sqrt(s2) <= EPS_M))
    contrib = np.where(zero_out, 0.0, s2 / (2.0 * denom))
    return float(grid.dt * np.sum(contrib))


def _apply_collocated(state, grid, op):
    """Apply a pointwise (density, momentum) map to the interval fields.

    The map acts on ``(u, m)``; the node densities (including the pinned
    marginal slices) pass through untouched.
    """
    out = state.copy()
    u_new, m_new = op(state.u, state.m)
    out.u[:] = u_new
    out.m[:] = m_new
    return out


def _apply_staggered(state, grid, collocated_apply):
    """Midpoint-averaged coupling: op on the centered field, transpose back.

    The staggered increment is the adjoint redistribution of the centered
    increment; an approximation of the exact staggered prox, documented as
    such.  Pinned marginal slices and boundary faces are restored afterwards.
    """
    cent = midpoint_average(state, grid)
    new_cent = collocated_apply(cent)
    delta = new_cent - cent
    out = state + midpoint_average_adjoint(delta, grid)
    out.rho[0] = state.rho[0]
    out.rho[-1] = state.rho[-1]
    for ax in range(grid.d):
        sl0 = [slice(None)] * out.m[ax].ndim
        sl1 = [slice(None)] * out.m[ax].ndim
        sl0[1 + ax] = 0
        sl1[1 + ax] = -1
        out.m[ax][tuple(sl0)] = 0.0
        out.m[ax][tuple(sl1)] = 0.0
    return out


def prox_kinetic_field(state: TransportState, grid: Grid, alpha: float) -> TransportState:
    """Kinetic prox over a whole state, acting on the interval fields.

    With the uniform ``dt`` volume weighting the pointwise prox step equals
    ``alpha`` on every interval slice.
    """
    def op(u, m):
        return prox_kinetic(u, m, alpha)

    if state.layout == COLLOCATED:
        return _apply_collocated(state, grid, op)
    return _apply_staggered(state, grid, lambda c: _apply_collocated(c, grid, op))


def prox_kinetic_fd_field(
    state: TransportState, grid: Grid, tau: float, diag_field: DiagramField
) -> TransportState:
    """Combined kinetic + congestion prox over a whole state."""
    def op(u, m):
        return prox_kinetic_fd(
            u, m, tau, diag_field.diagram,
            v0=diag_field.v0, rho_hat=diag_field.rho_hat,
        )

    if state.layout == COLLOCATED:
        return _apply_collocated(state, grid, op)
    return _apply_staggered(state, grid, lambda c: _apply_collocated(c, grid, op))


def project_fd_field(
    state: TransportState, grid: Grid, diag_field: DiagramField
) -> TransportState:
    """Pointwise projection of the interval fields onto the congestion set."""
    def op(u, m):
        return project_fd(
            diag_field.diagram, u, m, v0=diag_field.v0, rho_hat=diag_field.rho_hat
        )

    if state.layout == COLLOCATED:
        return _apply_collocated(state, grid, op)
    return _apply_staggered(state, grid, lambda c: _apply_collocated(c, grid, op))
