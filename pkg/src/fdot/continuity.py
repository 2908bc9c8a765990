"""Projection onto the mass-conservation affine set via a space-time Poisson solve.

The constraint set is ``C = {x : K x = y}`` where ``K`` acts on the free
(unpinned) variables and ``y`` collects the marginal contributions.  The
Euclidean projection is ``x - K*(KK*)^{-1}(Kx - y)``; the normal operator
``KK*`` is a separable Neumann space-time Laplacian, diagonal in the DCT-II
basis, with a conjugate-gradient fallback for completeness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn
from scipy.linalg import cho_solve_banded, cholesky_banded
from scipy.sparse.linalg import LinearOperator, cg

from .grid import (
    COLLOCATED,
    STAGGERED,
    DualField,
    Grid,
    TransportState,
    adjoint_divergence,
    divergence,
    field_norm,
)

Array = np.ndarray

SPECTRAL = "spectral"
CG = "cg"


@dataclass(frozen=True)
class ContinuityRhs:
    """Right-hand side ``y`` of ``Kx = y`` (marginals folded into the stencil)."""

    y: Array

    @classmethod
    def from_marginals(cls, mu: Array, nu: Array, grid: Grid,
                       layout: str = COLLOCATED) -> "ContinuityRhs":
        mu = np.asarray(mu, dtype=float)
        nu = np.asarray(nu, dtype=float)
        if mu.shape != tuple(grid.N) or nu.shape != tuple(grid.N):
            raise ValueError("marginal shapes do not match the grid")
        total = float(mu.sum())
        if abs(total - float(nu.sum())) > 1e-12 * max(abs(total), 1.0):
            raise ValueError("marginals must carry equal mass")
        y = np.zeros(grid.div_shape(layout))
        y[0] = mu / grid.dt
        y[-1] = -nu / grid.dt
        return cls(y)


def _interior_state(state: TransportState, grid: Grid) -> TransportState:
    """Copy with the pinned variables zeroed (the free-variable part)."""
    out = state.copy()
    out.rho[0] = 0.0
    out.rho[-1] = 0.0
    if state.layout == STAGGERED:
        for ax in range(grid.d):
            sl0 = [slice(None)] * out.m[ax].ndim
            sl1 = [slice(None)] * out.m[ax].ndim
            sl0[1 + ax] = 0
            sl1[1 + ax] = -1
            out.m[ax][tuple(sl0)] = 0.0
            out.m[ax][tuple(sl1)] = 0.0
    return out


def interior_divergence(state: TransportState, grid: Grid) -> Array:
    """``K`` restricted to the free variables (pinned slices read as zero)."""
    return divergence(_interior_state(state, grid), grid)


def interior_adjoint(phi, grid: Grid, layout: str = COLLOCATED) -> TransportState:
    """``K*`` for the free variables: full transpose with pinned entries zeroed."""
    out = adjoint_divergence(phi, grid, layout)
    return _interior_state(out, grid)


def _eigenvalues(grid: Grid, layout: str) -> Array:
    """Eigenvalues of ``KK*`` in the DCT-II basis over all axes."""
    dt, dx = grid.dt, grid.dx
    rows = grid.P if layout == COLLOCATED else grid.P + 1
    if layout == COLLOCATED:
        lam_t = 4.0 * np.sin(np.pi * np.arange(rows) / (2 * grid.P)) ** 2 / dt**2
        lam_x = [np.sin(np.pi * np.arange(n) / n) ** 2 / h**2
                 for n, h in zip(grid.N, dx)]
    else:
        lam_t = 4.0 * np.sin(np.pi * np.arange(rows) / (2 * (grid.P + 1))) ** 2 / dt**2
        lam_x = [4.0 * np.sin(np.pi * np.arange(n) / (2 * n)) ** 2 / h**2
                 for n, h in zip(grid.N, dx)]
    lam = lam_t.reshape((-1,) + (1,) * grid.d)
    for ax, lx in enumerate(lam_x):
        shape = [1] * (grid.d + 1)
        shape[1 + ax] = -1
        lam = lam + lx.reshape(shape)
    return lam


class ContinuityProjector:
    """Stateful projector onto ``{x : Kx = y}`` for one grid/layout.

    The spectral backend diagonalizes ``KK*`` exactly; the CG backend is
    matrix-free with Jacobi preconditioning and warm starts across calls.
    """

    def __init__(self, grid: Grid, layout: str = COLLOCATED,
                 backend: str = SPECTRAL, tol: float = 1e-12):
        if backend not in (SPECTRAL, CG):
            raise ValueError(f"unknown backend {backend!r}")
        self.grid = grid
        self.layout = layout
        self.backend = backend
        self.tol = tol
        self._lam = _eigenvalues(grid, layout)
        self._warm: Array | None = None
        if backend == CG:
            self._diag = self._jacobi_diagonal()

    # -- normal operator ----------------------------------------------------

    def _normal_apply(self, phi: Array) -> Array:
        x = interior_adjoint(phi, self.grid, self.layout)
        return interior_divergence(x, self.grid)

    def _jacobi_diagonal(self) -> Array:
        g = self.grid
        rows = g.P if self.layout == COLLOCATED else g.P + 1
        dt2, diag = g.dt**2, None
        t = np.full(rows, 2.0 / dt2)
        t[0] = t[-1] = 1.0 / dt2
        diag = t.reshape((-1,) + (1,) * g.d) + np.zeros(g.div_shape(self.layout))
        for ax, (n, h) in enumerate(zip(g.N, g.dx)):
            if self.layout == COLLOCATED:
                sx = np.full(n, 0.5 / h**2)
            else:
                sx = np.full(n, 2.0 / h**2)
                sx[0] = sx[-1] = 1.0 / h**2
            shape = [1] * (g.d + 1)
            shape[1 + ax] = -1
            diag = diag + sx.reshape(shape)
        return diag

    # -- Poisson solve ------------------------------------------------------

    def solve(self, rhs: Array) -> DualField:
        """Zero-mean ``phi`` with ``KK* phi = rhs`` (rhs must be compatible)."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != self.grid.div_shape(self.layout):
            raise ValueError("rhs shape does not match the grid")
        mean = float(rhs.mean())
        total_scale = float(np.abs(rhs).sum()) + 1.0
        if abs(mean) * rhs.size > 1e-10 * total_scale:
            raise ValueError("incompatible rhs: nonzero total (unequal marginal mass?)")
        r = rhs - mean
        if self.backend == SPECTRAL:
            coef = dctn(r, type=2, norm="ortho")
            lam = self._lam.copy()
            lam.flat[0] = 1.0
            coef = coef / lam
            coef.flat[0] = 0.0
            phi = idctn(coef, type=2, norm="ortho")
        else:
            phi = self._solve_cg(r)
        return DualField(phi - phi.mean())

    def _solve_cg(self, r: Array) -> Array:
        shape = r.shape
        op = LinearOperator(
            (r.size, r.size),
            matvec=lambda v: self._normal_apply(v.reshape(shape)).ravel(),
        )
        pre = LinearOperator(
            (r.size, r.size), matvec=lambda v: v / self._diag.ravel()
        )
        x0 = None
        if self._warm is not None:
            x0 = (self._warm - self._warm.mean()).ravel()
        rnorm = np.linalg.norm(r)
        phi, info = cg(op, r.ravel(), x0=x0, M=pre,
                       rtol=self.tol, atol=self.tol * max(rnorm, 1e-300),
                       maxiter=10 * r.size)
        if info != 0:
            raise RuntimeError(f"conjugate gradient did not converge (info={info})")
        phi = phi.reshape(shape)
        self._warm = phi
        return phi

    # -- projection ---------------------------------------------------------

    def project(self, state: TransportState, rhs: ContinuityRhs) -> TransportState:
        """Euclidean projection of ``state`` onto ``{Kx = y}``.

        The pinned marginal slices are left untouched; the correction
        ``-K* phi`` acts on the free variables only.
        """
        r = interior_divergence(state, self.grid) - rhs.y
        phi = self.solve(r)
        corr = interior_adjoint(phi.phi, self.grid, self.layout)
        return state - corr


class IntervalCoupling:
    """Affine tie between node and interval densities (collocated layout).

    The constraint set is ``{(rho, u) : u_k = (rho_k + rho_{k+1})/2}`` with
    the marginal slices ``rho_0 = mu`` and ``rho_P = nu`` held fixed.  As a
    linear map on the free variables this reads ``u - B rho_free = h`` where
    ``B`` averages adjacent free nodes and ``h`` carries the pinned halves.
    The Euclidean projection solves the constant-coefficient symmetric
    tridiagonal system ``(I + B^T B) rho = r + B^T (u - h)`` per cell, via a
    banded Cholesky factorization computed once.
    """

    def __init__(self, mu: Array, nu: Array, grid: Grid):
        mu = np.asarray(mu, dtype=float)
        nu = np.asarray(nu, dtype=float)
        if mu.shape != tuple(grid.N) or nu.shape != tuple(grid.N):
            raise ValueError("marginal shapes do not match the grid")
        self.grid = grid
        P = grid.P
        self.h = np.zeros((P, *grid.N))
        self.h[0] += 0.5 * mu
        self.h[-1] += 0.5 * nu
        ab = np.zeros((2, P - 1))
        ab[0, 1:] = 0.25
        ab[1, :] = 1.5
        self._chol = cholesky_banded(ab)

    def residual(self, state: TransportState) -> Array:
        """``u - B rho_free - h`` (zero exactly on the constraint set)."""
        rz = state.rho.copy()
        rz[0] = 0.0
        rz[-1] = 0.0
        return state.u - 0.5 * (rz[:-1] + rz[1:]) - self.h

    def apply_adjoint(self, phi: Array) -> TransportState:
        """Transpose of ``x -> u - B rho_free`` applied to a multiplier field."""
        g = self.grid
        if phi.shape != (g.P, *g.N):
            raise ValueError("multiplier shape does not match the grid")
        out = TransportState.zeros(g, COLLOCATED)
        out.u[:] = phi
        out.rho[1:-1] = -0.5 * (phi[:-1] + phi[1:])
        return out

    def project(self, state: TransportState) -> TransportState:
        g = self.grid
        out = state.copy()
        r = state.rho[1:-1].reshape(g.P - 1, -1)
        w = (state.u - self.h).reshape(g.P, -1)
        b = r + 0.5 * (w[:-1] + w[1:])
        rho_free = cho_solve_banded((self._chol, False), b)
        out.rho[1:-1] = rho_free.reshape(state.rho[1:-1].shape)
        out.u[:] = 0.5 * (out.rho[:-1] + out.rho[1:])
        return out


def solve_poisson(rhs: Array, grid: Grid, layout: str = COLLOCATED,
                  backend: str = SPECTRAL) -> DualField:
    return ContinuityProjector(grid, layout, backend).solve(rhs)


def project_continuity(state: TransportState, rhs: ContinuityRhs, grid: Grid,
                       projector: ContinuityProjector | None = None) -> TransportState:
    if projector is None:
        projector = ContinuityProjector(grid, state.layout)
    return projector.project(state, rhs)


def continuity_residual(state: TransportState, rhs: ContinuityRhs, grid: Grid) -> float:
    """Volume-weighted norm of ``Kx - y``."""
    return field_norm(interior_divergence(state, grid) - rhs.y, grid)
