"""Problem construction: Gaussian marginals, obstacle geometries, validation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diagram import GREENSHIELDS, DiagramField, FundamentalDiagram
from .grid import COLLOCATED, Grid
from .prox import ObstacleMask

Array = np.ndarray

CONSTRAINED = "constrained"
UNCONSTRAINED = "unconstrained"

# effectively unlimited capacity used to realize unconstrained transport
_FREE_V0 = 1e3
_FREE_RHO_HAT = 1e6


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" | "warning"
    message: str


@dataclass
class ProblemSpec:
    """Marginals + grid + congestion law + obstacles for one transport run."""

    grid: Grid
    mu: Array
    nu: Array
    diagram: DiagramField
    mask: ObstacleMask | None = None
    mode: str = CONSTRAINED
    layout: str = COLLOCATED

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.nu = np.asarray(self.nu, dtype=float)
        if self.mode not in (CONSTRAINED, UNCONSTRAINED):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == UNCONSTRAINED:
            self.diagram = DiagramField(
                FundamentalDiagram.greenshields(_FREE_V0, _FREE_RHO_HAT)
            )

    @classmethod
    def build(cls, grid, mu, nu, diagram=None, mask=None,
              mode=CONSTRAINED, layout=COLLOCATED) -> "ProblemSpec":
        """Assemble a spec, defaulting to effectively uncapped transport.

        When an obstacle mask is given, negligible marginal tail mass
        (< 1e-6) falling on blocked cells is removed and the marginals are
        renormalized; more than that is left for :func:`validate` to reject.
        """
        if diagram is None:
            diagram = DiagramField(
                FundamentalDiagram.greenshields(_FREE_V0, _FREE_RHO_HAT)
            )
        elif isinstance(diagram, FundamentalDiagram):
            diagram = DiagramField(diagram)
        if mask is not None:
            blocked = ~mask.free_at(grid, 0)
            mu = np.asarray(mu, dtype=float)
            nu = np.asarray(nu, dtype=float)
            spill = max(float(mu[blocked].sum()), float(nu[blocked].sum()))
            if 0 < spill < 1e-6:
                mu = np.where(blocked, 0.0, mu)
                nu = np.where(blocked, 0.0, nu)
                mu = mu / mu.sum()
                nu = nu / nu.sum()
        return cls(grid, mu, nu, diagram, mask, mode, layout)


def _normalize(density: Array) -> Array:
    density = np.where(density < 1e-15, 0.0, density)
    total = density.sum()
    if total <= 0:
        raise ValueError("density has no mass after clipping")
    return density / total


def gaussian_1d(center: float, scale: float, grid: Grid) -> Array:
    """Unit-mass Gaussian sampled at cell centers, clipped and renormalized.

    ``scale`` is the standard-deviation-like width parameter.
    """
    if not 0.0 < center < 1.0:
        raise ValueError("center must lie in (0, 1)")
    if scale <= 0:
        raise ValueError("scale must be positive")
    if grid.d != 1:
        raise ValueError("gaussian_1d needs a 1D grid")
    x = grid.cell_centers(0)
    return _normalize(np.exp(-((x - center) ** 2) / (2.0 * scale**2)))


def gaussian_2d(center, scale: float, grid: Grid) -> Array:
    """Isotropic unit-mass Gaussian on a 2D grid."""
    center = np.asarray(center, dtype=float)
    if center.shape != (2,) or np.any(center <= 0) or np.any(center >= 1):
        raise ValueError("center must be a 2-vector inside (0,1)^2")
    if scale <= 0:
        raise ValueError("scale must be positive")
    if grid.d != 2:
        raise ValueError("gaussian_2d needs a 2D grid")
    x = grid.cell_centers(0)[:, None]
    y = grid.cell_centers(1)[None, :]
    r2 = (x - center[0]) ** 2 + (y - center[1]) ** 2
    return _normalize(np.exp(-r2 / (2.0 * scale**2)))


def toll_gate_mask(num_blocks: int, gap_width: int, band_rows, grid: Grid) -> ObstacleMask:
    """Blocked horizontal band with one centered gap per block segment.

    ``band_rows`` is a ``(start, stop)`` index range along the second axis.
    ``num_blocks = 0`` yields an all-free mask.
    """
    if grid.d != 2:
        raise ValueError("toll gates need a 2D grid")
    free = np.ones(grid.N, dtype=bool)
    if num_blocks == 0:
        return ObstacleMask(free)
    if gap_width < 1:
        raise ValueError("need at least one gap cell per block")
    r0, r1 = int(band_rows[0]), int(band_rows[1])
    if not (0 <= r0 < r1 <= grid.N[1]):
        raise ValueError("band rows out of range")
    nx = grid.N[0]
    seg = nx / num_blocks
    if gap_width > seg:
        raise ValueError("gap wider than a block segment")
    blocked = np.zeros(nx, dtype=bool)
    blocked[:] = True
    for b in range(num_blocks):
        mid = (b + 0.5) * seg
        g0 = int(round(mid - gap_width / 2.0))
        g0 = max(0, min(nx - gap_width, g0))
        blocked[g0:g0 + gap_width] = False
    free[:, r0:r1] = ~blocked[:, None]
    return ObstacleMask(free)


def _centroid(density: Array, grid: Grid) -> Array:
    total = density.sum()
    out = np.zeros(grid.d)
    for ax in range(grid.d):
        x = grid.cell_centers(ax).reshape(
            [-1 if a == ax else 1 for a in range(grid.d)]
        )
        out[ax] = float((density * x).sum() / total)
    return out


def validate(problem: ProblemSpec) -> list[Diagnostic]:
    """Pure screening: hard errors for malformed data, warnings for
    probable infeasibility (centroid-displacement flux heuristic)."""
    out: list[Diagnostic] = []
    g = problem.grid
    mu, nu = problem.mu, problem.nu
    if mu.shape != tuple(g.N) or nu.shape != tuple(g.N):
        out.append(Diagnostic("error", "marginal shapes do not match the grid"))
        return out
    if np.any(mu < 0) or np.any(nu < 0):
        out.append(Diagnostic("error", "negative marginal density"))
    mm, mn = float(mu.sum()), float(nu.sum())
    if abs(mm - mn) > 1e-12 * max(mm, mn, 1.0):
        out.append(Diagnostic("error", f"unequal masses: {mm:.6g} vs {mn:.6g}"))
    if abs(mm - 1.0) > 1e-9:
        out.append(Diagnostic("warning", f"total mass {mm:.6g} is not 1"))

    if problem.mask is not None:
        blocked = ~problem.mask.free_at(g, 0)
        if problem.mask.free.shape not in (tuple(g.N), (g.P + 1, *g.N)):
            out.append(Diagnostic("error", "obstacle mask shape mismatch"))
        elif float(mu[blocked].sum()) > 1e-15 or float(nu[blocked].sum()) > 1e-15:
            out.append(Diagnostic("error", "marginal mass placed on blocked cells"))

    # capacity heuristic: the centroid velocity equals the total momentum of
    # a slice, which the capacity curve bounds by sum_i Q(rho_i); for unit
    # mass spread over C free cells that is at most C * Q(1/C)
    df = problem.diagram
    free_cells = g.num_cells
    if problem.mask is not None:
        free_cells = max(int(problem.mask.free_at(g, 0).sum()), 1)
    cap = float(np.max(np.asarray(df.max_flux())))
    per_cell = min(float(np.min(np.asarray(df.flux(1.0 / free_cells)))), cap)
    throughput = free_cells * max(per_cell, 0.0)
    move = _centroid(nu, g) - _centroid(mu, g)
    for ax in range(g.d):
        if abs(move[ax]) > throughput:
            out.append(Diagnostic(
                "warning",
                f"axis {ax}: centroid displacement {abs(move[ax]):.3g} exceeds "
                f"estimated throughput {throughput:.3g}; "
                "problem may be infeasible",
            ))
    return out
