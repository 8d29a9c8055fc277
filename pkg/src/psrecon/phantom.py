"""Synthetic specimens, scan planning, and the forward measurement model.

A measurement is one laser spot fired at a known position; the camera
sees the blurred temperature field of that spot plus any internal
defects the illumination wakes up.  Defects re-emit a fraction zeta of
the local absorbed power, so they only show in frames whose spot
footprint reaches them.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.signal import fftconvolve

from .errors import UsageError
from .thermal import ExcitationTemporal, Grid2D, PlateSpec, PsfField, synth_psf

# Scan-boundary slack, relative to each roi dimension.  Physical roi
# extents are quoted to a few significant figures; a lattice row that
# misses the boundary by less than this is still placed.
ROI_SLACK_REL = 1e-3

ROW_PITCH_FACTOR = np.sqrt(3.0) / 2.0

Rect = tuple[float, float, float, float]  # (x0, y0, width, height), m


@dataclass
class DefectMap:
    """Ground-truth internal defects on a pixel grid.

    ``weights`` holds the re-emission fraction zeta in [0, 1) per pixel;
    ``rects`` lists the generating rectangles in m.
    """

    grid: Grid2D
    weights: NDArray[np.float64]
    rects: list[Rect] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != self.grid.shape:
            raise ValueError(
                f"weights shape {self.weights.shape} != grid shape {self.grid.shape}"
            )
        if np.any(self.weights < 0) or np.any(self.weights >= 1):
            raise ValueError("defect weights must lie in [0, 1)")
        outside = self.weights.copy()
        for r in self.rects:
            outside[_rect_mask(self.grid, r)] = 0.0
        if np.any(outside != 0):
            iy, ix = np.argwhere(outside != 0)[0]
            raise ValueError(f"nonzero weight at pixel ({iy}, {ix}) outside every rectangle")

    @classmethod
    def from_rects(
        cls, grid: Grid2D, rects: list[Rect], zeta: float | list[float]
    ) -> "DefectMap":
        zetas = [zeta] * len(rects) if np.isscalar(zeta) else list(zeta)
        if len(zetas) != len(rects):
            raise ValueError(f"{len(rects)} rects but {len(zetas)} zeta values")
        weights = np.zeros(grid.shape)
        for r, z in zip(rects, zetas):
            if not 0.0 <= z < 1.0:
                raise ValueError(f"zeta must lie in [0, 1), got {z}")
            mask = _rect_mask(grid, r)
            weights[mask] = np.maximum(weights[mask], z)
        return cls(grid=grid, weights=weights, rects=list(rects))

    def mask(self) -> NDArray[np.bool_]:
        return self.weights > 0


def _rect_mask(grid: Grid2D, rect: Rect) -> NDArray[np.bool_]:
    """Pixels whose node position falls in the half-open rectangle."""
    x0, y0, w, h = rect
    if w <= 0 or h <= 0:
        raise ValueError(f"rectangle must have positive extent, got {rect}")
    xs, ys = grid.x(), grid.y()
    in_x = (xs >= x0) & (xs < x0 + w)
    in_y = (ys >= y0) & (ys < y0 + h)
    return in_y[:, None] & in_x[None, :]


@dataclass
class ScanPlan:
    """Ordered laser-spot positions plus the beam geometry."""

    positions: NDArray[np.float64]  # (n_m, 2), columns (x, y), m
    spot_pitch: float               # nearest-neighbor spacing r_d, m
    spot_diameter: float            # top-hat beam diameter, m
    n_rows: int = 1

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ValueError(f"positions must be (n_m, 2), got {self.positions.shape}")
        if self.spot_pitch <= 0 or self.spot_diameter <= 0:
            raise ValueError("spot_pitch and spot_diameter must be positive")

    @property
    def n_m(self) -> int:
        return self.positions.shape[0]


def plan_triangular_grid(roi: Rect, spot_pitch: float, spot_diameter: float) -> ScanPlan:
    """Lay out spot positions on an equilateral-triangle lattice inside roi.

    Rows run along x at spacing sqrt(3)/2 * spot_pitch; every other row
    is shifted by half a pitch.  Positions are ordered serpentine
    (row-major, alternating direction), which matches how a scanner
    would actually visit them.

    A pitch exceeding both roi extents degenerates to a single centered
    position, with a warning.
    """
    x0, y0, width, height = roi
    if width <= 0 or height <= 0:
        raise UsageError(f"roi must have positive extents, got {roi}")
    if spot_pitch <= 0:
        raise UsageError(f"spot_pitch must be positive, got {spot_pitch}")
    if spot_diameter <= 0:
        raise UsageError(f"spot_diameter must be positive, got {spot_diameter}")

    if spot_pitch > width and spot_pitch > height:
        warnings.warn(
            "spot_pitch exceeds both roi extents; falling back to a single centered spot",
            RuntimeWarning,
        )
        pos = np.array([[x0 + width / 2.0, y0 + height / 2.0]])
        return ScanPlan(pos, spot_pitch, spot_diameter, n_rows=1)

    row_pitch = ROW_PITCH_FACTOR * spot_pitch
    h_eff = height * (1.0 + ROI_SLACK_REL)
    w_eff = width * (1.0 + ROI_SLACK_REL)
    n_rows = int(np.floor(h_eff / row_pitch)) + 1
    rows = []
    for j in range(n_rows):
        offset = (spot_pitch / 2.0) if (j % 2) else 0.0
        n_cols = int(np.floor((w_eff - offset) / spot_pitch)) + 1
        if n_cols < 1:
            continue
        xs = x0 + offset + spot_pitch * np.arange(n_cols)
        if j % 2:
            xs = xs[::-1]
        ys = np.full(n_cols, y0 + j * row_pitch)
        rows.append(np.column_stack([xs, ys]))
    positions = np.concatenate(rows, axis=0)
    return ScanPlan(positions, spot_pitch, spot_diameter, n_rows=len(rows))


def required_measurements_2d(n_1d: int) -> int:
    """Spot count needed to cover in 2-D what n_1d spots cover per axis.

    The triangular lattice packs sqrt(3)/2 times denser than a square
    one, so the 2-D count is round(sqrt(3)/2 * n_1d^2).
    """
    if n_1d < 1:
        raise ValueError(f"n_1d must be at least 1, got {n_1d}")
    return int(round(ROW_PITCH_FACTOR * n_1d * n_1d))


@dataclass
class MeasurementSet:
    """Blind-spot measurement stack: one background-subtracted frame per
    laser position, optionally with the full cooling time series."""

    grid: Grid2D
    frames: NDArray[np.float32]            # (n_m, n_y, n_x), K
    eval_time: float                       # s after pulse start
    plan: ScanPlan
    plate: PlateSpec
    excitation: ExcitationTemporal
    noise_sigma: float = 0.0               # K, std of added readout noise
    seed: int = 0
    series: NDArray[np.float32] | None = None   # (n_m, n_t, n_y, n_x)
    frame_times: NDArray[np.float64] | None = None  # (n_t,), s

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be (n_m, n_y, n_x), got {self.frames.shape}")
        if self.frames.shape[1:] != self.grid.shape:
            raise ValueError(
                f"frame shape {self.frames.shape[1:]} != grid shape {self.grid.shape}"
            )
        if self.frames.shape[0] != self.plan.n_m:
            raise ValueError(
                f"{self.frames.shape[0]} frames for {self.plan.n_m} planned positions"
            )
        if self.series is not None:
            self.series = np.asarray(self.series, dtype=np.float32)
            if self.series.shape[0] != self.plan.n_m or self.series.shape[2:] != self.grid.shape:
                raise ValueError(f"series shape {self.series.shape} inconsistent with grid/plan")

    @property
    def n_m(self) -> int:
        return self.frames.shape[0]


def _odd_kernel_grid(grid: Grid2D) -> Grid2D:
    """Kernel grid with odd pixel counts so that scipy's same-mode
    convolution keeps the kernel center on the source pixel."""
    n_x = grid.n_x + (1 - grid.n_x % 2)
    n_y = grid.n_y + (1 - grid.n_y % 2)
    return Grid2D(n_x=n_x, n_y=n_y, dx=grid.dx, dy=grid.dy)


def _disc_kernel(grid: Grid2D, diameter: float, supersample: int = 4) -> NDArray[np.float64]:
    """Odd-sized top-hat disc, area-weighted at the rim by supersampling."""
    radius = diameter / 2.0
    half_x = int(np.ceil(radius / grid.dx)) + 1
    half_y = int(np.ceil(radius / grid.dy)) + 1
    sub = (np.arange(supersample) + 0.5) / supersample - 0.5
    xs = np.arange(-half_x, half_x + 1) * grid.dx
    ys = np.arange(-half_y, half_y + 1) * grid.dy
    xf = (xs[:, None] + sub[None, :] * grid.dx).ravel()
    yf = (ys[:, None] + sub[None, :] * grid.dy).ravel()
    inside = (yf[:, None] ** 2 + xf[None, :] ** 2) <= radius**2
    counts = inside.reshape(ys.size, supersample, xs.size, supersample).sum(axis=(1, 3))
    return counts / float(supersample**2)


def _splat(grid: Grid2D, position: tuple[float, float]) -> NDArray[np.float64]:
    """Bilinear deposition of a unit delta at an off-node position."""
    x, y = position
    w_x, h_y = grid.extent()
    if not (0.0 <= x <= w_x and 0.0 <= y <= h_y):
        raise UsageError(f"position ({x:.6g}, {y:.6g}) m outside the grid extent")
    fx_ix = x / grid.dx
    fy_iy = y / grid.dy
    ix = min(int(fx_ix), grid.n_x - 1)
    iy = min(int(fy_iy), grid.n_y - 1)
    fx = fx_ix - ix
    fy = fy_iy - iy
    out = np.zeros(grid.shape)
    ix1 = min(ix + 1, grid.n_x - 1)
    iy1 = min(iy + 1, grid.n_y - 1)
    out[iy, ix] += (1 - fx) * (1 - fy)
    out[iy, ix1] += fx * (1 - fy)
    out[iy1, ix] += (1 - fx) * fy
    out[iy1, ix1] += fx * fy
    return out


def forward_simulate(
    plate: PlateSpec,
    excitation: ExcitationTemporal,
    plan: ScanPlan,
    defects: DefectMap,
    eval_time: float,
    noise_sigma: float = 0.0,
    seed: int = 0,
    n_dim: int = 2,
    series_terms: int = 20,
    n_frames: int | None = None,
    threads: int = 1,
) -> MeasurementSet:
    """Simulate the background-subtracted frame stack for a scan plan.

    For measurement m the effective source is the illuminated footprint
    plus the defect map gated by the heat that actually reaches it:

        a_m = E_m + zeta * G_m

    with E_m the rasterized top-hat disc at spot m and G_m the thermal
    footprint of that spot (the point-spread field normalised to 1 at
    its peak).  A defect under the spot center re-emits with its full
    zeta; one a blur width away barely wakes up; one across the plate
    stays dark.  The frame is the point-spread field convolved with a_m,
    plus white readout noise of std ``noise_sigma`` drawn from a
    per-measurement stream keyed by (seed, m), so results do not depend
    on evaluation order.

    With ``n_frames`` set, a full cooling series is also produced at
    times (k+1)/frame_rate for k < n_frames.
    """
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be non-negative, got {noise_sigma}")
    grid = defects.grid
    kgrid = _odd_kernel_grid(grid)
    kcenter = kgrid.center()

    psf = synth_psf(plate, excitation, kgrid, kcenter, eval_time, n_dim, series_terms)
    disc = _disc_kernel(grid, plan.spot_diameter)
    thermal_gate = psf.values / psf.values.max()

    times = None
    series_kernels = None
    if n_frames is not None:
        if n_frames < 1:
            raise ValueError(f"n_frames must be at least 1, got {n_frames}")
        times = (np.arange(n_frames) + 1.0) / excitation.frame_rate
        series_kernels = [
            synth_psf(plate, excitation, kgrid, kcenter, float(t), n_dim, series_terms).values
            for t in times
        ]

    def simulate_one(m: int):
        splat = _splat(grid, tuple(plan.positions[m]))
        footprint = np.clip(fftconvolve(splat, disc, mode="same"), 0.0, None)
        gate = np.clip(fftconvolve(splat, thermal_gate, mode="same"), 0.0, 1.0)
        source = footprint + defects.weights * gate
        rng = np.random.default_rng([seed, m])
        frame = fftconvolve(source, psf.values, mode="same")
        if noise_sigma > 0:
            frame = frame + rng.normal(0.0, noise_sigma, size=grid.shape)
        series_m = None
        if series_kernels is not None:
            series_m = np.stack([fftconvolve(source, k, mode="same") for k in series_kernels])
            if noise_sigma > 0:
                series_m = series_m + rng.normal(0.0, noise_sigma, size=series_m.shape)
        return frame, series_m

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(simulate_one, range(plan.n_m)))
    else:
        results = [simulate_one(m) for m in range(plan.n_m)]

    frames = np.stack([r[0] for r in results]).astype(np.float32)
    series = None
    if n_frames is not None:
        series = np.stack([r[1] for r in results]).astype(np.float32)
    return MeasurementSet(
        grid=grid,
        frames=frames,
        eval_time=eval_time,
        plan=plan,
        plate=plate,
        excitation=excitation,
        noise_sigma=noise_sigma,
        seed=seed,
        series=series,
        frame_times=times,
    )


@dataclass
class HomogeneityReport:
    """Uniformity of the summed, blurred illumination over the roi interior."""

    coefficient_of_variation: float
    mean: float
    std: float
    widened: NDArray[np.float64]
    interior: NDArray[np.bool_]
    threshold: float
    passed: bool


def _gaussian_kernel(grid: Grid2D, fwhm: float) -> NDArray[np.float64]:
    """Gaussian of the given FWHM, truncated to compact support at 2*FWHM
    so that rigid shifts of the spot pattern leave interior values exactly
    shift-equivalent."""
    sigma = fwhm / (2.0 * np.sqrt(2.0 * np.log(2.0)))
    radius = 2.0 * fwhm
    half_x = int(np.ceil(radius / grid.dx))
    half_y = int(np.ceil(radius / grid.dy))
    xs = np.arange(-half_x, half_x + 1) * grid.dx
    ys = np.arange(-half_y, half_y + 1) * grid.dy
    rr = ys[:, None] ** 2 + xs[None, :] ** 2
    kern = np.exp(-rr / (2.0 * sigma**2))
    kern[rr > radius**2] = 0.0
    return kern


def homogeneity_check(
    plan: ScanPlan,
    spot_profile: PsfField | float | None,
    grid: Grid2D,
    roi: Rect | None = None,
    threshold: float = 0.05,
) -> HomogeneityReport:
    """Test whether the scan delivers near-uniform summed excitation.

    The spot pattern is widened to the thermal blur width and the
    coefficient of variation std/mean is computed over the roi interior,
    eroded by one blur width from the boundary.  A sparse or one-sided
    plan fails loudly (large CoV); a lattice at half the blur pitch or
    finer passes comfortably.

    ``spot_profile`` selects the widening kernel: a PsfField uses the
    sampled field itself (its measured FWHM sets the erosion margin); a
    float is a blur FWHM in m; None falls back to the beam diameter.
    """
    if isinstance(spot_profile, PsfField):
        margin = spot_profile.fwhm_pixels() * spot_profile.grid.dx
        kernel = spot_profile.values / spot_profile.values.sum()
    elif spot_profile is None:
        margin = plan.spot_diameter
        kernel = _disc_kernel(grid, plan.spot_diameter)
    else:
        margin = float(spot_profile)
        if margin <= 0:
            raise UsageError(f"widening width must be positive, got {margin}")
        kernel = _gaussian_kernel(grid, margin)

    splat_sum = np.zeros(grid.shape)
    for pos in plan.positions:
        splat_sum += _splat(grid, tuple(pos))
    widened = fftconvolve(splat_sum, kernel, mode="same")

    if roi is None:
        w, h = grid.extent()
        roi = (0.0, 0.0, w if w > 0 else grid.dx, h if h > 0 else grid.dy)
    rx0, ry0, rw, rh = roi
    xs, ys = grid.x(), grid.y()
    in_x = (xs >= rx0 + margin) & (xs <= rx0 + rw - margin)
    in_y = (ys >= ry0 + margin) & (ys <= ry0 + rh - margin)
    interior = in_y[:, None] & in_x[None, :]
    if not interior.any():
        raise UsageError(
            f"roi too small: nothing remains after eroding {margin:.4g} m from the boundary"
        )

    vals = widened[interior]
    mean = float(vals.mean())
    std = float(vals.std())
    cov = float(std / mean) if mean != 0 else float("inf")
    return HomogeneityReport(
        coefficient_of_variation=cov,
        mean=mean,
        std=std,
        widened=widened,
        interior=interior,
        threshold=threshold,
        passed=bool(cov < threshold),
    )
