"""Did the reconstruction actually resolve the defects?

Separability asks whether two known defects appear as two peaks with a
genuine dip between them; support metrics compare the activated pixels
against the ground-truth footprint.  Peak significance is judged against
a robust noise floor so a flat or junk map cannot pass by accident.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from .errors import UsageError
from .phantom import DefectMap, _rect_mask


@dataclass
class PairResult:
    """Verdict for one defect pair."""

    pair: tuple[int, int]
    separated: bool
    peaks: tuple[float, float]
    valley: float
    valley_ratio: float       # valley / lower peak, clipped below at 0
    gap: float                # m, edge-to-edge distance of the truth rects
    profile: NDArray[np.float64]


@dataclass
class SupportReport:
    """Activated-support comparison against the dilated truth footprint."""

    iou: float
    localization_errors: list[float]  # m, per truth rect; NaN when missed
    missing: list[bool]
    activation: NDArray[np.bool_]
    threshold_frac: float


@dataclass
class SeparabilityReport:
    """Pairwise separation verdicts plus the support comparison.

    ``noise_floor`` is median + 3*MAD over off-defect pixels (truth
    dilated by one pixel); peaks must clear it for a pair to count.
    """

    pairs: list[PairResult]
    support_iou: float
    localization_errors: list[float]  # m, per truth rect
    noise_floor: float
    baseline: float                   # median of off-defect pixels
    valley_threshold: float
    activation: NDArray[np.bool_]


def _pair_gap(r1, r2) -> float:
    """Edge-to-edge distance between two axis-aligned rectangles."""
    x0a, y0a, wa, ha = r1
    x0b, y0b, wb, hb = r2
    dx = max(0.0, max(x0a, x0b) - min(x0a + wa, x0b + wb))
    dy = max(0.0, max(y0a, y0b) - min(y0a + ha, y0b + hb))
    return float(np.hypot(dx, dy))


def separability(
    amap: NDArray,
    truth: DefectMap,
    valley_threshold: float = 0.5,
    pairs: list[tuple[int, int]] | None = None,
    n_profile: int = 256,
    activation_threshold_frac: float = 0.5,
) -> SeparabilityReport:
    """Assess pairwise defect separation in a reconstructed map.

    A pair counts as separated when both defects carry a peak above the
    off-defect noise floor (median + 3*MAD) and the map dips, somewhere
    on the line between the two centroids and outside both rectangles,
    below ``valley_threshold`` times the lower peak.  The ratio is taken
    on raw map values, so a map sitting on a large pedestal (for example
    a plain thermogram) saturates toward 1 and fails.

    ``pairs`` restricts the report to specific rect index pairs; by
    default every unordered pair is scored.  Fewer than two defects in
    the truth yields an empty pair list, not an error.
    """
    amap = np.asarray(amap, dtype=float)
    if amap.shape != truth.grid.shape:
        raise UsageError(f"map shape {amap.shape} != truth grid {truth.grid.shape}")
    if not 0.0 < valley_threshold < 1.0:
        raise UsageError(f"valley_threshold must lie in (0, 1), got {valley_threshold}")
    if pairs is None:
        pairs = [(i, j) for i in range(len(truth.rects)) for j in range(i + 1, len(truth.rects))]
    else:
        for i, j in pairs:
            if not (0 <= i < len(truth.rects) and 0 <= j < len(truth.rects)):
                raise UsageError(f"pair ({i}, {j}) indexes outside the {len(truth.rects)} truth rects")

    grid = truth.grid
    rect_masks = [_rect_mask(grid, r) for r in truth.rects]
    any_defect = np.zeros(grid.shape, dtype=bool)
    for m in rect_masks:
        any_defect |= m
    off = ~ndimage.binary_dilation(any_defect, iterations=1) if any_defect.any() else np.ones(grid.shape, dtype=bool)
    if not off.any():
        raise UsageError("no off-defect pixels left to estimate the noise floor")
    off_vals = amap[off]
    baseline = float(np.median(off_vals))
    mad = float(np.median(np.abs(off_vals - baseline)))
    floor = baseline + 3.0 * mad

    results = []
    for i, j in pairs:
        r1, r2 = truth.rects[i], truth.rects[j]
        m1 = ndimage.binary_dilation(rect_masks[i], iterations=1)
        m2 = ndimage.binary_dilation(rect_masks[j], iterations=1)
        peak1 = float(amap[m1].max())
        peak2 = float(amap[m2].max())

        c1 = np.array([r1[0] + r1[2] / 2.0, r1[1] + r1[3] / 2.0])
        c2 = np.array([r2[0] + r2[2] / 2.0, r2[1] + r2[3] / 2.0])
        ts = np.linspace(0.0, 1.0, n_profile)
        line = c1[None, :] + ts[:, None] * (c2 - c1)[None, :]
        rows = line[:, 1] / grid.dy
        cols = line[:, 0] / grid.dx
        profile = ndimage.map_coordinates(amap, [rows, cols], order=1, mode="nearest")

        def _inside(rect, pts):
            x0, y0, w, h = rect
            return (pts[:, 0] >= x0) & (pts[:, 0] < x0 + w) & (pts[:, 1] >= y0) & (pts[:, 1] < y0 + h)

        between = ~_inside(r1, line) & ~_inside(r2, line)
        valley = float(profile[between].min()) if between.any() else float(profile.min())

        lower_peak = min(peak1, peak2)
        ratio = float(valley / lower_peak) if lower_peak > 0 else float("nan")
        if np.isfinite(ratio):
            ratio = max(ratio, 0.0)
        separated = bool(
            peak1 > floor and peak2 > floor and np.isfinite(ratio) and ratio < valley_threshold
        )
        results.append(
            PairResult(
                pair=(i, j),
                separated=separated,
                peaks=(peak1, peak2),
                valley=valley,
                valley_ratio=ratio,
                gap=_pair_gap(r1, r2),
                profile=profile,
            )
        )

    support = support_metrics(amap, truth, activation_threshold_frac)
    return SeparabilityReport(
        pairs=results,
        support_iou=support.iou,
        localization_errors=support.localization_errors,
        noise_floor=floor,
        baseline=baseline,
        valley_threshold=valley_threshold,
        activation=support.activation,
    )


def support_metrics(
    amap: NDArray,
    truth: DefectMap,
    activation_threshold_frac: float = 0.5,
) -> SupportReport:
    """Binarise the map at a fraction of its peak and compare supports.

    IoU is computed against the truth mask dilated by one pixel, which
    forgives single-pixel registration slips.  Localisation error per
    truth rect is the distance from its centroid to the centroid of the
    nearest activated component; rects with no activated component within
    the map are reported missing (NaN error).
    """
    amap = np.asarray(amap, dtype=float)
    if amap.shape != truth.grid.shape:
        raise UsageError(f"map shape {amap.shape} != truth grid {truth.grid.shape}")
    if not 0.0 < activation_threshold_frac <= 1.0:
        raise UsageError(
            f"activation_threshold_frac must lie in (0, 1], got {activation_threshold_frac}"
        )
    grid = truth.grid
    peak = float(amap.max())
    if peak <= 0.0:
        activation = np.zeros(grid.shape, dtype=bool)
    else:
        activation = amap >= activation_threshold_frac * peak

    truth_dil = ndimage.binary_dilation(truth.mask(), iterations=1)
    union = activation | truth_dil
    iou = float((activation & truth_dil).sum() / union.sum()) if union.any() else 0.0

    labels, n_comp = ndimage.label(activation)
    centroids = []
    if n_comp:
        for com in ndimage.center_of_mass(amap, labels, index=range(1, n_comp + 1)):
            centroids.append(np.array([com[1] * grid.dx, com[0] * grid.dy]))

    errors: list[float] = []
    missing: list[bool] = []
    for rect in truth.rects:
        center = np.array([rect[0] + rect[2] / 2.0, rect[1] + rect[3] / 2.0])
        if not centroids:
            errors.append(float("nan"))
            missing.append(True)
            continue
        dists = [float(np.linalg.norm(c - center)) for c in centroids]
        errors.append(min(dists))
        missing.append(False)
    return SupportReport(
        iou=iou,
        localization_errors=errors,
        missing=missing,
        activation=activation,
        threshold_frac=activation_threshold_frac,
    )
