#!/usr/bin/env python3
"""Render figures from a solver output directory.

Reads only the documented file formats (``manifest.json`` plus the CSV
artifacts) so it stays fully decoupled from the solver package.

Usage:
    plots.py <out_dir> --kinds evolution,fd_scatter,convergence --times 0,2,5 --fmt png
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

KINDS = ("evolution", "fd_scatter", "vectors", "convergence", "mass_hist")


class PlotError(RuntimeError):
    """Missing inputs or an unknown plot kind."""


@dataclass
class PlotJob:
    out_dir: Path
    kinds: list[str]
    times: list[int] = field(default_factory=list)
    fmt: str = "png"
    compare_dir: Path | None = None

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        unknown = set(self.kinds) - set(KINDS)
        if unknown:
            raise PlotError(f"unknown plot kind(s): {', '.join(sorted(unknown))}")


# ---------------------------------------------------------------------------
# input readers


def load_manifest(out_dir: Path) -> dict:
    path = out_dir / "manifest.json"
    if not path.is_file():
        raise PlotError(f"no manifest.json in {out_dir}")
    manifest = json.loads(path.read_text())
    missing = [f for f in manifest.get("files", []) if not (out_dir / f).is_file()]
    if missing:
        raise PlotError(f"manifest references missing files: {', '.join(missing)}")
    return manifest


def read_field(out_dir: Path, name: str) -> np.ndarray:
    path = out_dir / name
    if not path.is_file():
        raise PlotError(f"missing file {name}")
    return np.atleast_2d(np.loadtxt(path, delimiter=","))


def read_convergence(out_dir: Path) -> dict[str, np.ndarray]:
    path = out_dir / "convergence.csv"
    if not path.is_file():
        raise PlotError(f"missing file convergence.csv in {out_dir}")
    data = np.genfromtxt(path, delimiter=",", names=True)
    data = np.atleast_1d(data)
    return {name: np.asarray(data[name]) for name in data.dtype.names}


def capacity_curve(diagram_cfg: dict, rho: np.ndarray) -> np.ndarray:
    """Analytic flux-density curve recomputed from manifest parameters."""
    fam = diagram_cfg["family"]
    v0 = float(diagram_cfg["v0"])
    rho_hat = float(diagram_cfg["rho_hat"])
    if fam == "greenshields":
        q = v0 * rho * (1.0 - rho / rho_hat)
    elif fam == "triangular":
        rho_c = diagram_cfg.get("rho_c")
        w = diagram_cfg.get("w")
        if rho_c is None:
            rho_c = w * rho_hat / (v0 + w)
        rho_c = float(rho_c)
        if w is None:
            w = v0 * rho_c / (rho_hat - rho_c)
        q = np.where(rho <= rho_c, v0 * rho, w * (rho_hat - rho))
    elif fam in ("beta_family", "smulders"):
        rho_c = float(diagram_cfg["rho_c"])
        alpha = float(diagram_cfg.get("alpha", 1.0))
        beta = float(diagram_cfg.get("beta", 1.0))
        free = v0 * rho * (1.0 - (rho / rho_hat) ** alpha)
        qc = v0 * rho_c * (1.0 - (rho_c / rho_hat) ** alpha)
        with np.errstate(invalid="ignore"):
            cong = qc * ((rho_hat - rho) / (rho_hat - rho_c)) ** beta
        q = np.where(rho <= rho_c, free, cong)
    else:
        raise PlotError(f"unknown diagram family {fam!r}")
    return np.clip(q, 0.0, None)


# ---------------------------------------------------------------------------
# renderers (one per kind, each returns the written image path)


def _save(fig, out_dir: Path, stem: str, fmt: str) -> Path:
    path = out_dir / f"{stem}.{fmt}"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def render_evolution(job: PlotJob, manifest: dict) -> list[Path]:
    N = manifest["grid"]["N"]
    P = manifest["grid"]["P"]
    times = job.times or list(range(P + 1))
    bad = [k for k in times if not 0 <= k <= P]
    if bad:
        raise PlotError(f"evolution time index out of range: {bad}")
    if len(N) == 1:
        fig, ax = plt.subplots(figsize=(7, 4))
        x = (np.arange(N[0]) + 0.5) / N[0]
        for k in times:
            rho = read_field(job.out_dir, f"rho_t{k}.csv").ravel()
            ax.plot(x, rho, label=f"t = {k}/{P}")
        ax.set_xlabel("position")
        ax.set_ylabel("density")
        ax.set_title("density evolution")
        ax.legend(fontsize=8)
        return [_save(fig, job.out_dir, "evolution", job.fmt)]
    paths = []
    for k in times:
        rho = read_field(job.out_dir, f"rho_t{k}.csv")
        fig, ax = plt.subplots(figsize=(5, 5))
        im = ax.imshow(rho.T, origin="lower", extent=(0, 1, 0, 1))
        fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_title(f"density, t = {k}/{P}")
        paths.append(_save(fig, job.out_dir, f"evolution_t{k}", job.fmt))
    return paths


def render_fd_scatter(job: PlotJob, manifest: dict) -> list[Path]:
    P = manifest["grid"]["P"]
    times = job.times or list(range(P))
    bad = [k for k in times if not 0 <= k < P]
    if bad:
        raise PlotError(f"fd_scatter time index out of range: {bad}")
    diagram_cfg = manifest["config"]["problem"].get("diagram")
    fig, ax = plt.subplots(figsize=(6, 4))
    rho_max = 0.0
    for k in times:
        path = job.out_dir / f"fd_scatter_t{k}.csv"
        if not path.is_file():
            raise PlotError(f"missing file fd_scatter_t{k}.csv")
        data = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
        rho, flux = data[:, 0], data[:, 1]
        ax.scatter(rho, flux, s=8, alpha=0.6, label=f"t = {k}/{P}")
        rho_max = max(rho_max, float(rho.max(initial=0.0)))
    if diagram_cfg is not None:
        grid = np.linspace(0.0, float(diagram_cfg["rho_hat"]), 400)
        ax.plot(grid, capacity_curve(diagram_cfg, grid), "k-", lw=1.2,
                label="capacity Q(rho)")
    ax.set_xlabel("density rho")
    ax.set_ylabel("flux magnitude")
    ax.set_title("flux-density scatter")
    ax.legend(fontsize=8)
    return [_save(fig, job.out_dir, "fd_scatter", job.fmt)]


def render_vectors(job: PlotJob, manifest: dict) -> list[Path]:
    N = manifest["grid"]["N"]
    P = manifest["grid"]["P"]
    if len(N) != 2:
        raise PlotError("vector plots need a 2D run")
    times = job.times or list(range(P))
    bad = [k for k in times if not 0 <= k < P]
    if bad:
        raise PlotError(f"vectors time index out of range: {bad}")
    paths = []
    for k in times:
        mx = read_field(job.out_dir, f"m0_t{k}.csv")
        my = read_field(job.out_dir, f"m1_t{k}.csv")
        x = (np.arange(N[0]) + 0.5) / N[0]
        y = (np.arange(N[1]) + 0.5) / N[1]
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.quiver(x[:, None] + 0.0 * my, y[None, :] + 0.0 * mx, mx, my,
                  np.hypot(mx, my), angles="xy")
        ax.set_title(f"momentum, interval {k}")
        paths.append(_save(fig, job.out_dir, f"vectors_t{k}", job.fmt))
    return paths


def render_convergence(job: PlotJob, manifest: dict) -> list[Path]:
    runs = [(manifest.get("solver", "run"), read_convergence(job.out_dir))]
    if job.compare_dir is not None:
        other = load_manifest(job.compare_dir)
        runs.append((other.get("solver", "compare"),
                     read_convergence(job.compare_dir)))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for label, cols in runs:
        ax1.semilogx(cols["iter"], cols["objective"], label=label)
        ax2.loglog(cols["iter"], np.maximum(cols["continuity_residual"], 1e-300),
                   label=f"{label} continuity")
        ax2.loglog(cols["iter"], np.maximum(cols["fd_violation"], 1e-300),
                   ls="--", label=f"{label} capacity")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("objective")
    ax1.legend(fontsize=8)
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("residual")
    ax2.legend(fontsize=8)
    fig.suptitle("convergence")
    return [_save(fig, job.out_dir, "convergence", job.fmt)]


def render_mass_hist(job: PlotJob, manifest: dict) -> list[Path]:
    path = job.out_dir / "mass.csv"
    if not path.is_file():
        raise PlotError("missing file mass.csv")
    cols = np.genfromtxt(path, delimiter=",", names=True)
    cols = np.atleast_1d(cols)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(cols["time_index"], cols["mass"], width=0.8)
    ax.set_xlabel("time index")
    ax.set_ylabel("total mass")
    ax.set_title("mass per time slice")
    return [_save(fig, job.out_dir, "mass_hist", job.fmt)]


_RENDERERS = {
    "evolution": render_evolution,
    "fd_scatter": render_fd_scatter,
    "vectors": render_vectors,
    "convergence": render_convergence,
    "mass_hist": render_mass_hist,
}


def render(job: PlotJob) -> list[Path]:
    """Render every requested kind; returns the written image paths."""
    manifest = load_manifest(job.out_dir)
    paths: list[Path] = []
    for kind in job.kinds:
        paths.extend(_RENDERERS[kind](job, manifest))
    return paths


# ---------------------------------------------------------------------------
# CLI


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Render figures from solver output directories")
    parser.add_argument("out_dir", help="solver output directory")
    parser.add_argument("--kinds", default="evolution,fd_scatter,convergence",
                        help=f"comma-separated subset of {','.join(KINDS)}")
    parser.add_argument("--times", default="",
                        help="comma-separated time indices (default: all)")
    parser.add_argument("--fmt", default="png", choices=["png", "pdf", "svg"])
    parser.add_argument("--compare", default=None,
                        help="second output directory to overlay on the "
                             "convergence plot")
    args = parser.parse_args(argv)
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    times = [int(t) for t in args.times.split(",") if t.strip()]
    try:
        job = PlotJob(Path(args.out_dir), kinds, times, args.fmt,
                      Path(args.compare) if args.compare else None)
        paths = render(job)
    except (PlotError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
