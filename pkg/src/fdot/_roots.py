"""Vectorized scalar root finding helpers (Cardano, scan + bisection)."""

from __future__ import annotations

import numpy as np

Array = np.ndarray

_TINY = 1e-300


def cubic_real_roots(b: Array, c: Array, d: Array, polish: int = 2) -> Array:
    """All real roots of the monic cubic ``t^3 + b t^2 + c t + d = 0``.

    Broadcasts over the inputs; returns an array of shape ``(3, ...)`` with
    NaN entries where fewer than three real roots exist.  ``polish`` Newton
    steps remove the cancellation error of the closed form.
    """
    b, c, d = np.broadcast_arrays(*np.atleast_1d(b, c, d))
    p = c - b * b / 3.0
    q = 2.0 * b**3 / 27.0 - b * c / 3.0 + d
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3

    roots = np.full((3, *b.shape), np.nan)

    one = disc > 0.0
    if np.any(one):
        sq = np.sqrt(np.where(one, disc, 0.0))
        u = np.cbrt(-q / 2.0 + sq) + np.cbrt(-q / 2.0 - sq)
        roots[0] = np.where(one, u - b / 3.0, roots[0])

    three = ~one
    if np.any(three):
        r = np.sqrt(np.maximum(-p / 3.0, 0.0))
        # cos(3 phi) = 3q / (2 p r); guard the triple-root limit r -> 0
        cos3 = np.clip(3.0 * q / (2.0 * p * np.where(r > 0, r, 1.0) + _TINY), -1, 1)
        phi = np.arccos(cos3) / 3.0
        for k in range(3):
            t = 2.0 * r * np.cos(phi - 2.0 * np.pi * k / 3.0) - b / 3.0
            roots[k] = np.where(three, t, roots[k])

    for _ in range(polish):
        f = ((roots + b) * roots + c) * roots + d
        fp = (3.0 * roots + 2.0 * b) * roots + c
        step = np.where(np.abs(fp) > 1e-30, f / np.where(fp != 0, fp, 1.0), 0.0)
        roots = roots - np.where(np.isfinite(step), step, 0.0)
    return roots


def scan_sign_changes(g, lo, hi, npts: int = 48, nbisect: int = 64, newton=None):
    """Roots of ``g`` on ``[lo, hi]`` found by sign scan + bisection.

    ``g`` maps an array broadcastable with ``lo``/``hi`` to values of the
    same shape.  Returns an array ``(2, ...)`` holding the refined first and
    last sign-change roots (NaN where the scan finds none).  ``newton``, if
    given, is the derivative of ``g`` used for a few polish steps.
    """
    lo, hi = np.broadcast_arrays(*np.atleast_1d(lo, hi))
    ts = lo + (hi - lo) * np.linspace(0.0, 1.0, npts).reshape((-1,) + (1,) * lo.ndim)
    vals = g(ts)
    sgn = np.signbit(vals)
    change = sgn[:-1] != sgn[1:]

    out = np.full((2, *lo.shape), np.nan)
    any_change = change.any(axis=0)
    if not np.any(any_change):
        return out

    first = np.argmax(change, axis=0)
    last = npts - 2 - np.argmax(change[::-1], axis=0)
    for slot, idx in enumerate((first, last)):
        idx_e = idx[None]
        a = np.take_along_axis(ts, idx_e, 0)[0]
        b = np.take_along_axis(ts, idx_e + 1, 0)[0]
        fa = np.take_along_axis(vals, idx_e, 0)[0]
        for _ in range(nbisect):
            mid = 0.5 * (a + b)
            fm = g(mid)
            left = np.signbit(fm) == np.signbit(fa)
            a = np.where(left, mid, a)
            fa = np.where(left, fm, fa)
            b = np.where(left, b, mid)
        root = 0.5 * (a + b)
        if newton is not None:
            for _ in range(3):
                gv = g(root)
                gp = newton(root)
                step = np.where(np.abs(gp) > 1e-30, gv / np.where(gp != 0, gp, 1.0), 0.0)
                cand = root - step
                ok = (cand >= lo) & (cand <= hi) & np.isfinite(cand)
                root = np.where(ok, cand, root)
        out[slot] = np.where(any_change, root, np.nan)
    return out
