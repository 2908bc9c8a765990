"""Fundamental-diagram families and the pointwise congestion projection.

The congestion law ``Q(rho)`` caps the admissible momentum magnitude:
``F = {(rho, m): ||m|| <= Q(rho), 0 <= rho <= rho_hat}``.  Three families
are provided:

* Greenshields: ``Q(rho) = rho v0 (1 - rho/rho_hat)``.
* Triangular: ``Q(rho) = min(v0 rho, w (rho_hat - rho))``.
* Beta family (Smulders, De Romph): linear free-flow branch below the
  critical density, power-law congested branch above it, glued continuously.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from ._roots import cubic_real_roots, scan_sign_changes

Array = np.ndarray

GREENSHIELDS = "greenshields"
TRIANGULAR = "triangular"
BETA_FAMILY = "beta_family"


def _signed_pow(u, beta):
    return np.sign(u) * np.abs(u) ** beta


@dataclass(frozen=True)
class FundamentalDiagram:
    """Congestion law ``Q(rho)`` with family-specific shape parameters."""

    family: str
    v0: float
    rho_hat: float
    rho_c: float | None = None
    w: float | None = None        # triangular backward wave slope
    alpha: float | None = None    # beta family free-flow slope
    beta: float | None = None     # beta family congested curvature

    def __post_init__(self):
        if self.v0 <= 0 or self.rho_hat <= 0:
            raise ValueError("need v0 > 0 and rho_hat > 0")
        if self.family == TRIANGULAR:
            if self.rho_c is None or self.w is None:
                raise ValueError("triangular diagram needs rho_c and w")
            if not (0 < self.rho_c < self.rho_hat) or self.w <= 0:
                raise ValueError("invalid triangular parameters")
            apex_gap = self.v0 * self.rho_c - self.w * (self.rho_hat - self.rho_c)
            if abs(apex_gap) > 1e-9 * self.v0 * self.rho_c:
                raise ValueError("triangular branches do not meet at rho_c")
        elif self.family == BETA_FAMILY:
            if self.rho_c is None or self.alpha is None or self.beta is None:
                raise ValueError("beta family needs rho_c, alpha, beta")
            if not (0 < self.rho_c < self.rho_hat):
                raise ValueError("need 0 < rho_c < rho_hat")
            if self.alpha * self.rho_c >= 1 or self.beta <= 0:
                raise ValueError("need alpha*rho_c < 1 and beta > 0")
        elif self.family != GREENSHIELDS:
            raise ValueError(f"unknown family {self.family!r}")

    # -- constructors -------------------------------------------------------

    @classmethod
    def greenshields(cls, v0: float, rho_hat: float) -> "FundamentalDiagram":
        return cls(GREENSHIELDS, v0, rho_hat)

    @classmethod
    def triangular(
        cls, v0: float, rho_hat: float, rho_c: float | None = None, w: float | None = None
    ) -> "FundamentalDiagram":
        if rho_c is None and w is None:
            raise ValueError("give rho_c or w")
        if rho_c is None:
            rho_c = w * rho_hat / (v0 + w)
        if w is None:
            w = v0 * rho_c / (rho_hat - rho_c)
        return cls(TRIANGULAR, v0, rho_hat, rho_c=rho_c, w=w)

    @classmethod
    def beta_family(
        cls, v0: float, rho_hat: float, rho_c: float, alpha: float, beta: float
    ) -> "FundamentalDiagram":
        return cls(BETA_FAMILY, v0, rho_hat, rho_c=rho_c, alpha=alpha, beta=beta)

    @classmethod
    def smulders(cls, v0: float, rho_hat: float, rho_c: float) -> "FundamentalDiagram":
        return cls.beta_family(v0, rho_hat, rho_c, alpha=1.0, beta=1.0)

    # -- evaluation ---------------------------------------------------------

    @property
    def gamma(self) -> float:
        """Congested-branch coefficient gluing the beta family at rho_c."""
        if self.family != BETA_FAMILY:
            raise AttributeError("gamma only defined for the beta family")
        return (
            self.v0
            * (1.0 - self.alpha * self.rho_c)
            * (1.0 / self.rho_c - 1.0 / self.rho_hat) ** (-self.beta)
        )

    def flux(self, rho):
        """Capacity ``Q(rho)``; evaluates the family formula on all reals."""
        rho = np.asarray(rho, dtype=float)
        if np.any(np.isnan(rho)):
            raise ValueError("NaN density")
        if self.family == GREENSHIELDS:
            return rho * self.v0 * (1.0 - rho / self.rho_hat)
        if self.family == TRIANGULAR:
            return np.minimum(self.v0 * rho, self.w * (self.rho_hat - rho))
        free = rho * self.v0 * (1.0 - self.alpha * rho)
        safe = np.where(rho > 0, rho, 1.0)
        cong = rho * self.gamma * _signed_pow(1.0 / safe - 1.0 / self.rho_hat, self.beta)
        return np.where(rho < self.rho_c, free, cong)

    def flux_slope(self, rho):
        """Derivative ``Q'(rho)`` (one-sided at kinks)."""
        rho = np.asarray(rho, dtype=float)
        if self.family == GREENSHIELDS:
            return self.v0 * (1.0 - 2.0 * rho / self.rho_hat)
        if self.family == TRIANGULAR:
            return np.where(self.v0 * rho < self.w * (self.rho_hat - rho), self.v0, -self.w)
        free = self.v0 * (1.0 - 2.0 * self.alpha * rho)
        safe = np.where(rho > 0, rho, 1.0)
        u = 1.0 / safe - 1.0 / self.rho_hat
        cong = self.gamma * (
            _signed_pow(u, self.beta) - self.beta / safe * _signed_pow(u, self.beta - 1.0)
        )
        return np.where(rho < self.rho_c, free, cong)

    def breakpoints(self) -> list[float]:
        """Interior densities where Q is not smooth."""
        if self.family == GREENSHIELDS:
            return []
        return [float(self.rho_c)]

    def critical_point(self) -> tuple[float, float]:
        """Maximizer of Q and the maximum flux ``(rho_c, m_c)``."""
        if self.family == GREENSHIELDS:
            return self.rho_hat / 2.0, self.v0 * self.rho_hat / 4.0
        if self.family == TRIANGULAR:
            return self.rho_c, self.v0 * self.rho_c
        res = minimize_scalar(
            lambda r: -float(self.flux(r)),
            bounds=(0.0, self.rho_hat),
            method="bounded",
            options={"xatol": 1e-10},
        )
        # the kink itself is a candidate the smooth optimizer can miss
        cands = [float(res.x), float(self.rho_c)]
        best = max(cands, key=lambda r: float(self.flux(r)))
        return best, float(self.flux(best))


def critical_point(diag: FundamentalDiagram) -> tuple[float, float]:
    return diag.critical_point()


def flux(diag: FundamentalDiagram, rho):
    return diag.flux(rho)


# ---------------------------------------------------------------------------
# Euclidean projection onto F


def _momentum_magnitude(m) -> Array:
    m = np.asarray(m, dtype=float)
    return np.sqrt(np.sum(m * m, axis=0))


def _greenshields_curve_project(rho, s, v0, rh):
    """Nearest point on/under the Greenshields curve for infeasible input.

    Candidates: real roots in (0, rho_hat) of the boundary stationarity
    cubic, the corner points (0,0) and (rho_hat,0), and the vertical drop
    onto the curve.  Returns ``(rho*, s*)`` arrays.
    """
    a = 2.0 * v0**2 / rh**2
    b = (-3.0 * v0**2 / rh) / a
    c = (v0**2 + 2.0 * s * v0 / rh + 1.0) / a
    d = -(rho + s * v0) / a
    roots = cubic_real_roots(b, c, d)
    roots = np.where((roots > 0.0) & (roots < rh), roots, np.nan)

    drop = np.clip(rho, 0.0, rh)
    zeros = np.zeros_like(np.asarray(rho, dtype=float))
    cand_r = np.stack([roots[0], roots[1], roots[2], zeros, zeros + rh, drop])
    with np.errstate(invalid="ignore"):
        cand_s = cand_r * v0 * (1.0 - cand_r / rh)
    cand_s = np.where(np.isnan(cand_r), np.nan, np.maximum(cand_s, 0.0))
    dist = (rho - cand_r) ** 2 + (s - cand_s) ** 2
    dist = np.where(np.isnan(dist), np.inf, dist)
    pick = np.argmin(dist, axis=0)[None]
    rstar = np.take_along_axis(cand_r, pick, 0)[0]
    sstar = np.take_along_axis(cand_s, pick, 0)[0]
    return rstar, sstar


def _segment_project(rho, s, ax, ay, bx, by):
    vx, vy = bx - ax, by - ay
    t = np.clip(((rho - ax) * vx + (s - ay) * vy) / (vx * vx + vy * vy), 0.0, 1.0)
    return ax + t * vx, ay + t * vy


def _triangular_curve_project(diag, rho, s):
    apex_x, apex_y = diag.rho_c, diag.v0 * diag.rho_c
    segs = [
        (0.0, 0.0, apex_x, apex_y),
        (apex_x, apex_y, diag.rho_hat, 0.0),
        (0.0, 0.0, diag.rho_hat, 0.0),
    ]
    best_r = best_s = None
    best_d = None
    for seg in segs:
        px, py = _segment_project(rho, s, *seg)
        dd = (rho - px) ** 2 + (s - py) ** 2
        if best_d is None:
            best_r, best_s, best_d = px, py, dd
        else:
            upd = dd < best_d
            best_r = np.where(upd, px, best_r)
            best_s = np.where(upd, py, best_s)
            best_d = np.minimum(best_d, dd)
    return best_r, best_s


def _beta_curve_project(diag, rho, s):
    eps = 1e-12 * diag.rho_hat

    def g(t):
        return (t - rho) + (diag.flux(t) - s) * diag.flux_slope(t)

    branches = [(eps, diag.rho_c - eps), (diag.rho_c + eps, diag.rho_hat - eps)]
    cand_r = [np.zeros_like(rho), np.full_like(rho, diag.rho_hat),
              np.full_like(rho, diag.rho_c), np.clip(rho, 0.0, diag.rho_hat)]
    for lo, hi in branches:
        roots = scan_sign_changes(g, np.full_like(rho, lo), np.full_like(rho, hi))
        cand_r.extend([roots[0], roots[1]])
    cand_r = np.stack(cand_r)
    with np.errstate(invalid="ignore"):
        cand_s = np.where(np.isnan(cand_r), np.nan,
                          np.maximum(diag.flux(np.nan_to_num(cand_r)), 0.0))
    dist = (rho - cand_r) ** 2 + (s - cand_s) ** 2
    dist = np.where(np.isnan(dist), np.inf, dist)
    pick = np.argmin(dist, axis=0)[None]
    return (np.take_along_axis(cand_r, pick, 0)[0],
            np.take_along_axis(cand_s, pick, 0)[0])


def project_fd(diag: FundamentalDiagram, rho, m, v0=None, rho_hat=None):
    """Euclidean projection of ``(rho, m)`` onto the congestion set F.

    ``m`` carries the vector components on its leading axis.  The momentum
    direction is preserved; only the magnitude and the density move.
    ``v0`` / ``rho_hat`` may be arrays overriding the uniform parameters
    (Greenshields family only).
    """
    rho = np.asarray(rho, dtype=float)
    scalar_in = rho.ndim == 0
    rho = np.atleast_1d(rho)
    m = np.atleast_1d(np.asarray(m, dtype=float))
    if m.shape == rho.shape:
        m = m[None]
    s = _momentum_magnitude(m)

    if v0 is not None or rho_hat is not None:
        if diag.family != GREENSHIELDS:
            raise ValueError("parameter fields only supported for Greenshields")
    v0 = np.broadcast_to(np.asarray(diag.v0 if v0 is None else v0, float), rho.shape)
    rh = np.broadcast_to(np.asarray(diag.rho_hat if rho_hat is None else rho_hat, float), rho.shape)

    if diag.family == GREENSHIELDS:
        q = rho * v0 * (1.0 - rho / rh)
    else:
        q = diag.flux(rho)
    feasible = (rho >= 0.0) & (rho <= rh) & (s <= q)

    if diag.family == GREENSHIELDS:
        rstar, sstar = _greenshields_curve_project(rho, s, v0, rh)
    elif diag.family == TRIANGULAR:
        rstar, sstar = _triangular_curve_project(diag, rho, s)
    else:
        rstar, sstar = _beta_curve_project(diag, rho, s)

    rho_out = np.where(feasible, rho, rstar)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(s > 0.0, sstar / np.where(s > 0, s, 1.0), 0.0)
    m_out = np.where(feasible[None], m, m * scale[None])
    if scalar_in:
        return float(rho_out[0]), m_out[:, 0]
    return rho_out, m_out


@dataclass(frozen=True)
class DiagramField:
    """A diagram applied uniformly, or per-cell Greenshields parameters.

    ``v0`` / ``rho_hat`` arrays broadcast against density fields (e.g. shape
    ``(*N,)`` for static heterogeneity or ``(T, *N)`` for time variation).
    """

    diagram: FundamentalDiagram
    v0: Array | None = None
    rho_hat: Array | None = None

    def __post_init__(self):
        if (self.v0 is not None or self.rho_hat is not None) and \
                self.diagram.family != GREENSHIELDS:
            raise ValueError("parameter fields require the Greenshields family")
        if self.v0 is not None and np.any(np.asarray(self.v0) <= 0):
            raise ValueError("v0 field must be positive")
        if self.rho_hat is not None and np.any(np.asarray(self.rho_hat) <= 0):
            raise ValueError("rho_hat field must be positive")

    @property
    def uniform(self) -> bool:
        return self.v0 is None and self.rho_hat is None

    def flux(self, rho):
        if self.uniform:
            return self.diagram.flux(rho)
        v0 = self.diagram.v0 if self.v0 is None else self.v0
        rh = self.diagram.rho_hat if self.rho_hat is None else self.rho_hat
        return rho * v0 * (1.0 - rho / rh)

    def max_flux(self, rho_shape=None):
        """Local maximum flux m_c (array broadcastable to the fields)."""
        if self.uniform:
            return np.asarray(self.diagram.critical_point()[1])
        v0 = self.diagram.v0 if self.v0 is None else np.asarray(self.v0)
        rh = self.diagram.rho_hat if self.rho_hat is None else np.asarray(self.rho_hat)
        return v0 * rh / 4.0

    def project(self, rho, m):
        return project_fd(self.diagram, rho, m, v0=self.v0, rho_hat=self.rho_hat)


def max_violation(diag_field: DiagramField, state) -> float:
    """Worst congestion-cap violation, relative to the local maximum flux.

    Zero iff the state lies in F everywhere.  ``state`` may be a
    TransportState (collocated; the interval density/momentum pair is
    checked) or a ``(rho, m)`` pair of arrays.
    """
    if hasattr(state, "rho"):
        if state.layout != "collocated":
            raise ValueError("max_violation expects collocated fields")
        rho, m = state.u, state.m
    else:
        rho, m = state
    s = _momentum_magnitude(m)
    q = diag_field.flux(rho)
    mc = diag_field.max_flux()
    excess = np.maximum(s - q, 0.0) / mc
    return float(np.max(excess)) if excess.size else 0.0
