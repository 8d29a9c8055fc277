"""Matplotlib renderings of maps, solver histories, and score reports.

Every function saves straight to a file and returns the path; nothing
here opens a window.  The CLI drops these next to the delimited outputs
so a run directory reads as a self-contained report.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib import patches
from numpy.typing import NDArray

from .phantom import DefectMap
from .solver import LCurveResult, SolveDiagnostics
from .thermal import Grid2D

_MM = 1e3


def save_map_figure(
    field: NDArray,
    path: str | Path,
    grid: Grid2D | None = None,
    title: str | None = None,
    truth: DefectMap | None = None,
    dpi: int = 150,
) -> Path:
    """Grayscale map with axes in mm and optional truth-rect outlines."""
    field = np.asarray(field, dtype=float)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    fig, ax = plt.subplots(figsize=(6.0, 6.0 * field.shape[0] / max(field.shape[1], 1) + 1.2))
    if grid is not None:
        w, h = grid.extent()
        extent = (0.0, w * _MM, h * _MM, 0.0)
        ax.set_xlabel("x [mm]")
        ax.set_ylabel("y [mm]")
    else:
        extent = None
        ax.set_xlabel("x [px]")
        ax.set_ylabel("y [px]")
    im = ax.imshow(field, cmap="gray", extent=extent, interpolation="nearest", aspect="equal")
    if truth is not None:
        for x0, y0, rw, rh in truth.rects:
            s = _MM if grid is not None else 1.0 / truth.grid.dx  # px fallback
            ax.add_patch(
                patches.Rectangle(
                    (x0 * s, y0 * s), rw * s, rh * s,
                    fill=False, edgecolor="tab:red", linewidth=1.0,
                )
            )
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.savefig(path, dpi=dpi, bbox_inches="tight")
    plt.close(fig)
    return path


def save_convergence_figure(
    diags: SolveDiagnostics, path: str | Path, dpi: int = 150
) -> Path:
    """Objective and residual histories on log axes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    iters = np.arange(1, diags.objective.size + 1)

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    ax1.semilogy(iters, np.maximum(diags.objective, 1e-300), color="tab:blue")
    ax1.axhline(diags.objective_init, color="tab:gray", linestyle=":", label="initial")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("objective")
    ax1.legend(loc="upper right", fontsize=8)

    scale = max(diags.state_norm, 1e-300)
    ax2.semilogy(iters, diags.primal_residual / scale, label="primal / ||z||")
    ax2.semilogy(iters, diags.dual_residual / scale, label="dual / ||z||")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("relative residual")
    ax2.legend(loc="upper right", fontsize=8)
    fig.suptitle(f"rho = {diags.rho:g}, {diags.n_iter_run} iterations", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return path


def save_lcurve_figure(lcurve: LCurveResult, path: str | Path, dpi: int = 150) -> Path:
    """Residual against solution norm per candidate, corner highlighted."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(4.8, 4.2))
    ax.loglog(lcurve.residual_norms, lcurve.solution_norms, "o-", color="tab:blue")
    for rho, rx, sx in zip(lcurve.candidates, lcurve.residual_norms, lcurve.solution_norms):
        ax.annotate(f"{rho:g}", (rx, sx), fontsize=7, xytext=(3, 3), textcoords="offset points")
    sel = np.argmin(np.abs(lcurve.candidates - lcurve.rho))
    ax.plot(
        lcurve.residual_norms[sel], lcurve.solution_norms[sel], "s",
        color="tab:red", markersize=9, fillstyle="none",
        label=f"selected rho = {lcurve.rho:g}" + (" (fallback)" if lcurve.fallback else ""),
    )
    ax.set_xlabel("residual norm")
    ax.set_ylabel("solution norm")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return path


def save_profile_figure(report, path: str | Path, dpi: int = 150) -> Path:
    """Cross-sections through each scored defect pair.

    ``report`` is a SeparabilityReport; one panel per pair, with the
    lower-peak threshold line that decided the verdict.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = max(len(report.pairs), 1)
    fig, axes = plt.subplots(n, 1, figsize=(6.0, 2.4 * n), squeeze=False)
    for ax, pr in zip(axes[:, 0], report.pairs):
        ts = np.linspace(0.0, 1.0, pr.profile.size)
        ax.plot(ts, pr.profile, color="tab:blue")
        lower = min(pr.peaks)
        ax.axhline(
            report.valley_threshold * lower, color="tab:red", linestyle="--",
            label=f"valley threshold ({report.valley_threshold:g} x lower peak)",
        )
        ax.axhline(report.noise_floor, color="tab:gray", linestyle=":", label="noise floor")
        verdict = "separated" if pr.separated else "not separated"
        ax.set_title(
            f"pair {pr.pair}: {verdict}, valley ratio {pr.valley_ratio:.3f}, "
            f"gap {pr.gap * _MM:.2f} mm",
            fontsize=9,
        )
        ax.set_xlabel("position along centroid line")
        ax.legend(fontsize=7, loc="upper center")
    if not report.pairs:
        axes[0, 0].text(0.5, 0.5, "fewer than two defects: no pairs to score",
                        ha="center", va="center")
        axes[0, 0].set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return path
