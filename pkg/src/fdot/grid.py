"""Space-time lattice, discrete continuity operator and its adjoint.

The domain is the unit cube sampled on a regular Cartesian lattice with
``N_l`` cells per spatial axis (spacing ``dx_l = 1/N_l``) and ``P`` time
steps of length ``dt = 1/P``.  Two field layouts are supported:

* ``collocated`` (default): density at the ``P+1`` time nodes (``rho`` has
  shape ``(P+1, *N)`` with slices ``0`` and ``P`` pinned to the marginals);
  momentum cell-centered in space but living on the ``P`` time intervals
  (``m`` has shape ``(d, P, *N)``), together with an auxiliary interval
  density ``u`` of shape ``(P, *N)`` that the energy and congestion maps
  act on.  The linear consistency constraint ``u_k = (rho_k + rho_{k+1})/2``
  is enforced by its own projection during the solves.  The discrete
  divergence lives on ``(P, *N)``: forward time differences of the node
  densities plus a face-averaged centered spatial divergence of the interval
  momentum, with no-flux boundaries.

* ``staggered``: densities at half-time levels (``rho`` has shape
  ``(P+2, *N)``, slices ``0`` and ``P+1`` holding the marginals) and
  momentum components on spatial faces (axis ``l`` stored with ``N_l + 1``
  entries, the two boundary faces pinned to zero).  The divergence lives on
  ``(P+1, *N)``.

Inner products are volume weighted: every entry carries the time-step
weight ``dt`` (the spatial measure is the per-cell counting measure, so
densities are per-cell masses).  With this uniform weighting the adjoint of
the divergence is its exact matrix transpose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

Array = np.ndarray

COLLOCATED = "collocated"
STAGGERED = "staggered"


class ShapeError(ValueError):
    """Field shapes do not match the grid / layout."""


@dataclass(frozen=True)
class Grid:
    """Space-time lattice geometry on the unit cube."""

    N: tuple[int, ...]
    P: int

    def __post_init__(self):
        object.__setattr__(self, "N", tuple(int(n) for n in np.atleast_1d(self.N)))
        if self.d not in (1, 2):
            raise ValueError(f"spatial dimension must be 1 or 2, got {self.d}")
        if any(n < 2 for n in self.N) or self.P < 2:
            raise ValueError("need N_l >= 2 and P >= 2")

    @property
    def d(self) -> int:
        return len(self.N)

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple(1.0 / n for n in self.N)

    @property
    def dt(self) -> float:
        return 1.0 / self.P

    @property
    def M(self) -> int:
        """Degrees of freedom of one stored scalar field (collocated)."""
        return (self.P + 1) * self.num_cells

    @property
    def num_cells(self) -> int:
        return math.prod(self.N)

    def cell_centers(self, axis: int) -> Array:
        n = self.N[axis]
        return (np.arange(n) + 0.5) / n

    def rho_shape(self, layout: str = COLLOCATED) -> tuple[int, ...]:
        extra = 1 if layout == COLLOCATED else 2
        return (self.P + extra, *self.N)

    def m_shapes(self, layout: str = COLLOCATED) -> list[tuple[int, ...]]:
        if layout == COLLOCATED:
            return [(self.P, *self.N)] * self.d
        shapes = []
        for ax in range(self.d):
            sp = list(self.N)
            sp[ax] += 1
            shapes.append((self.P + 1, *sp))
        return shapes

    def div_shape(self, layout: str = COLLOCATED) -> tuple[int, ...]:
        rows = self.P if layout == COLLOCATED else self.P + 1
        return (rows, *self.N)


@dataclass
class TransportState:
    """Density / momentum fields over the space-time lattice.

    ``m`` is a single ``(d, P, *N)`` array in collocated mode and a list of
    per-axis face arrays in staggered mode.  Collocated states additionally
    carry the interval density ``u`` of shape ``(P, *N)``; staggered states
    set ``u`` to ``None``.
    """

    rho: Array
    m: Array | list[Array]
    layout: str = COLLOCATED
    u: Array | None = None

    @classmethod
    def zeros(cls, grid: Grid, layout: str = COLLOCATED) -> "TransportState":
        rho = np.zeros(grid.rho_shape(layout))
        if layout == COLLOCATED:
            m = np.zeros((grid.d, grid.P, *grid.N))
            u = np.zeros((grid.P, *grid.N))
        else:
            m = [np.zeros(s) for s in grid.m_shapes(layout)]
            u = None
        return cls(rho, m, layout, u)

    def copy(self) -> "TransportState":
        m = self.m.copy() if self.layout == COLLOCATED else [a.copy() for a in self.m]
        u = self.u.copy() if self.u is not None else None
        return TransportState(self.rho.copy(), m, self.layout, u)

    def _binary(self, other, op) -> "TransportState":
        if self.layout != other.layout:
            raise ShapeError("layout mismatch")
        if self.layout == COLLOCATED:
            m = op(self.m, other.m)
            u = op(self.u, other.u)
        else:
            m = [op(a, b) for a, b in zip(self.m, other.m)]
            u = None
        return TransportState(op(self.rho, other.rho), m, self.layout, u)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, c: float):
        if self.layout == COLLOCATED:
            m = self.m * c
            u = self.u * c
        else:
            m = [a * c for a in self.m]
            u = None
        return TransportState(self.rho * c, m, self.layout, u)

    __rmul__ = __mul__

    def check(self, grid: Grid) -> None:
        if self.rho.shape != grid.rho_shape(self.layout):
            raise ShapeError(
                f"rho shape {self.rho.shape} != {grid.rho_shape(self.layout)}"
            )
        shapes = grid.m_shapes(self.layout)
        if self.layout == COLLOCATED:
            if self.m.shape != (grid.d, *shapes[0]):
                raise ShapeError(f"m shape {self.m.shape} != {(grid.d, *shapes[0])}")
            if self.u is None or self.u.shape != (grid.P, *grid.N):
                raise ShapeError("collocated state needs u of shape (P, *N)")
        else:
            for a, s in zip(self.m, shapes):
                if a.shape != s:
                    raise ShapeError(f"staggered m shape {a.shape} != {s}")


@dataclass
class DualField:
    """Scalar multiplier field on the divergence lattice (zero-mean rep)."""

    phi: Array

    def zero_mean(self) -> "DualField":
        return DualField(self.phi - self.phi.mean())


# ---------------------------------------------------------------------------
# spatial stencils


def _face_average(m_slice: Array, axis: int) -> Array:
    """Cell momentum -> all faces along ``axis`` (boundary faces zero)."""
    n = m_slice.shape[axis]
    shape = list(m_slice.shape)
    shape[axis] = n + 1
    face = np.zeros(shape, dtype=m_slice.dtype)
    lo = [slice(None)] * m_slice.ndim
    lo[axis] = slice(1, n)
    a = [slice(None)] * m_slice.ndim
    b = [slice(None)] * m_slice.ndim
    a[axis] = slice(0, n - 1)
    b[axis] = slice(1, n)
    face[tuple(lo)] = 0.5 * (m_slice[tuple(a)] + m_slice[tuple(b)])
    return face

def _face_average_t(face: Array, axis: int) -> Array:
    """Transpose of :func:`_face_average` (interior faces scatter 1/2)."""
    n = face.shape[axis] - 1
    shape = list(face.shape)
    shape[axis] = n
    out = np.zeros(shape, dtype=face.dtype)
    inner = [slice(None)] * face.ndim
    inner[axis] = slice(1, n)
    inner_vals = face[tuple(inner)]
    a = [slice(None)] * out.ndim
    b = [slice(None)] * out.ndim
    a[axis] = slice(0, n - 1)
    b[axis] = slice(1, n)
    out[tuple(a)] += 0.5 * inner_vals
    out[tuple(b)] += 0.5 * inner_vals
    return out


def _face_diff(face: Array, axis: int, dx: float) -> Array:
    return np.diff(face, axis=axis) / dx


def _face_diff_t(cellfield: Array, axis: int, dx: float) -> Array:
    """Transpose of :func:`_face_diff`: cells -> faces."""
    n = cellfield.shape[axis]
    shape = list(cellfield.shape)
    shape[axis] = n + 1
    out = np.zeros(shape, dtype=cellfield.dtype)
    a = [slice(None)] * out.ndim
    a[axis] = slice(0, n)
    out[tuple(a)] -= cellfield
    b = [slice(None)] * out.ndim
    b[axis] = slice(1, n + 1)
    out[tuple(b)] += cellfield
    return out / dx


# ---------------------------------------------------------------------------
# divergence and adjoint


def divergence(state: TransportState, grid: Grid) -> Array:
    """Discrete space-time divergence ``K(rho, m)`` (``u`` is not involved).

    Collocated: row ``k`` is ``(rho[k+1]-rho[k])/dt`` plus the spatial
    divergence of ``m[k]`` (k = 0..P-1).  Staggered: row ``k`` uses the
    half-time densities around level ``k`` and the face momentum at ``k``
    (k = 0..P).  The first/last rows consume the stored marginal slices.
    """
    state.check(grid)
    dt, dx = grid.dt, grid.dx
    if state.layout == COLLOCATED:
        out = np.diff(state.rho, axis=0) / dt
        for ax in range(grid.d):
            out += _face_diff(_face_average(state.m[ax], 1 + ax), 1 + ax, dx[ax])
        return out
    out = np.diff(state.rho, axis=0) / dt
    for ax in range(grid.d):
        out += _face_diff(state.m[ax], 1 + ax, dx[ax])
    return out


def adjoint_divergence(
    phi: DualField | Array, grid: Grid, layout: str = COLLOCATED
) -> TransportState:
    """Exact transpose ``K* phi`` of :func:`divergence` (negative gradient)."""
    p = phi.phi if isinstance(phi, DualField) else np.asarray(phi)
    if p.shape != grid.div_shape(layout):
        raise ShapeError(f"phi shape {p.shape} != {grid.div_shape(layout)}")
    dt, dx = grid.dt, grid.dx
    out = TransportState.zeros(grid, layout)
    # time part: transpose of the forward difference
    out.rho[0] = -p[0] / dt
    out.rho[1:-1] = np.diff(-p, axis=0) / dt
    out.rho[-1] = p[-1] / dt
    if layout == COLLOCATED:
        for ax in range(grid.d):
            out.m[ax][:] = _face_average_t(
                _face_diff_t(p, 1 + ax, dx[ax]), 1 + ax
            )
    else:
        for ax in range(grid.d):
            out.m[ax][:] = _face_diff_t(p, 1 + ax, dx[ax])
    return out


def midpoint_average(state: TransportState, grid: Grid) -> TransportState:
    """Relocate a staggered state to the centered (collocated) lattice.

    Node densities average adjacent half-level densities, interval densities
    copy the half-level values directly, and momentum is averaged from faces
    to cells in space and from time nodes to time intervals.
    """
    if state.layout != STAGGERED:
        raise ShapeError("midpoint_average expects a staggered state")
    state.check(grid)
    out = TransportState.zeros(grid, COLLOCATED)
    out.rho[:] = 0.5 * (state.rho[:-1] + state.rho[1:])
    out.u[:] = state.rho[1:-1]
    for ax in range(grid.d):
        sp = 1 + ax
        n = grid.N[ax]
        a = [slice(None)] * state.m[ax].ndim
        b = [slice(None)] * state.m[ax].ndim
        a[sp] = slice(0, n)
        b[sp] = slice(1, n + 1)
        cent = 0.5 * (state.m[ax][tuple(a)] + state.m[ax][tuple(b)])
        out.m[ax][:] = 0.5 * (cent[:-1] + cent[1:])
    return out


def midpoint_average_adjoint(state: TransportState, grid: Grid) -> TransportState:
    """Transpose of :func:`midpoint_average` (collocated -> staggered)."""
    if state.layout != COLLOCATED:
        raise ShapeError("expects a collocated state")
    state.check(grid)
    out = TransportState.zeros(grid, STAGGERED)
    out.rho[:-1] += 0.5 * state.rho
    out.rho[1:] += 0.5 * state.rho
    out.rho[1:-1] += state.u
    for ax in range(grid.d):
        sp = 1 + ax
        n = grid.N[ax]
        cent = np.zeros((grid.P + 1, *grid.N))
        cent[:-1] += 0.5 * state.m[ax]
        cent[1:] += 0.5 * state.m[ax]
        a = [slice(None)] * out.m[ax].ndim
        b = [slice(None)] * out.m[ax].ndim
        a[sp] = slice(0, n)
        b[sp] = slice(1, n + 1)
        out.m[ax][tuple(a)] += 0.5 * cent
        out.m[ax][tuple(b)] += 0.5 * cent
    return out


# ---------------------------------------------------------------------------
# weighted inner products (dt per entry; spatial counting measure)


def state_dot(a: TransportState, b: TransportState, grid: Grid) -> float:
    s = float(np.vdot(a.rho, b.rho))
    if a.layout == COLLOCATED:
        s += float(np.vdot(a.m, b.m)) + float(np.vdot(a.u, b.u))
    else:
        s += sum(float(np.vdot(x, y)) for x, y in zip(a.m, b.m))
    return grid.dt * s


def state_norm(a: TransportState, grid: Grid) -> float:
    return math.sqrt(max(state_dot(a, a, grid), 0.0))


def field_dot(u: Array, v: Array, grid: Grid) -> float:
    return grid.dt * float(np.vdot(u, v))


def field_norm(u: Array, grid: Grid) -> float:
    return math.sqrt(max(field_dot(u, u, grid), 0.0))


def estimate_operator_norm(
    grid: Grid,
    iters: int,
    layout: str = COLLOCATED,
    seed: int = 0,
    inflation: float = 0.01,
) -> float:
    """Power-iteration estimate of ``||K||`` (inflated by ``inflation``).

    The Rayleigh estimate is monotone nondecreasing in the iteration count,
    so the running maximum is returned.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    x = TransportState.zeros(grid, layout)
    x.rho[:] = rng.standard_normal(x.rho.shape)
    if layout == COLLOCATED:
        x.m[:] = rng.standard_normal(x.m.shape)
    else:
        for a in x.m:
            a[:] = rng.standard_normal(a.shape)
    best = 0.0
    for _ in range(iters):
        nx = state_norm(x, grid)
        if nx == 0.0:
            break
        x = x * (1.0 / nx)
        kx = divergence(x, grid)
        best = max(best, field_norm(kx, grid))
        x = adjoint_divergence(kx, grid, layout)
    return best * (1.0 + inflation)
