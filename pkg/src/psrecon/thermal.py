"""Analytic thermal point-spread model for a laser-heated plate.

A short laser pulse deposited on the front surface of a homogeneous
plate spreads by diffusion.  The surface temperature field around the
spot is a Gaussian whose width grows with time, multiplied by an
image-source series that accounts for reflections at the front and
back faces.  Everything here works in SI units (m, s, K, W).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

# Relative agreement demanded between an explicitly supplied diffusivity
# and k / (rho * c_p) before the plate is rejected as inconsistent.
DIFFUSIVITY_CONSISTENCY_RTOL = 1e-3

# Lower integration bound guarding the t^(-n_dim/2) singularity.
T_MIN = 1e-9

# A truncation warning is raised when the outermost image term still
# carries more than this fraction of the central term.
TRUNCATION_WARN_RATIO = 1e-9


@dataclass(frozen=True)
class PlateSpec:
    """Homogeneous plate under test.

    Attributes
    ----------
    thickness : float
        Plate thickness L in m.
    diffusivity : float
        Thermal diffusivity alpha in m^2/s.
    density : float
        Mass density in kg/m^3.
    heat_capacity : float
        Specific heat capacity c_p in J/(kg K).
    conductivity : float, optional
        Thermal conductivity in W/(m K).  Only used for a consistency
        check against the explicit diffusivity.
    reflection_coeff : float
        Thermal-wave reflection coefficient R of the plate faces,
        in [0, 1].  Close to 1 for metals in air.
    """

    thickness: float
    diffusivity: float
    density: float
    heat_capacity: float
    conductivity: float | None = None
    reflection_coeff: float = 1.0

    def __post_init__(self):
        if self.thickness <= 0:
            raise ValueError(f"thickness must be positive, got {self.thickness}")
        if self.diffusivity <= 0:
            raise ValueError(f"diffusivity must be positive, got {self.diffusivity}")
        if self.density <= 0:
            raise ValueError(f"density must be positive, got {self.density}")
        if self.heat_capacity <= 0:
            raise ValueError(f"heat_capacity must be positive, got {self.heat_capacity}")
        if not 0.0 <= self.reflection_coeff <= 1.0:
            raise ValueError(
                f"reflection_coeff must lie in [0, 1], got {self.reflection_coeff}"
            )
        if self.conductivity is not None:
            if self.conductivity <= 0:
                raise ValueError(f"conductivity must be positive, got {self.conductivity}")
            implied = self.conductivity / (self.density * self.heat_capacity)
            rel = abs(self.diffusivity - implied) / self.diffusivity
            if rel > DIFFUSIVITY_CONSISTENCY_RTOL:
                raise ValueError(
                    "diffusivity inconsistent with conductivity/(density*heat_capacity): "
                    f"{self.diffusivity:.6g} vs {implied:.6g} (rel {rel:.2e})"
                )


@dataclass(frozen=True)
class ExcitationTemporal:
    """Rectangular laser pulse: constant peak power over the pulse window."""

    pulse_duration: float  # s
    peak_power: float      # W
    frame_rate: float = 100.0  # Hz, camera sampling used for time series

    def __post_init__(self):
        if self.pulse_duration <= 0:
            raise ValueError(f"pulse_duration must be positive, got {self.pulse_duration}")
        if self.peak_power <= 0:
            raise ValueError(f"peak_power must be positive, got {self.peak_power}")
        if self.frame_rate <= 0:
            raise ValueError(f"frame_rate must be positive, got {self.frame_rate}")


@dataclass(frozen=True)
class Grid2D:
    """Regular pixel grid.  Fields are arrays of shape (n_y, n_x); pixel
    (iy, ix) sits at physical position (ix * dx, iy * dy)."""

    n_x: int
    n_y: int
    dx: float  # m
    dy: float  # m

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1:
            raise ValueError(f"grid must have at least one pixel, got {self.n_x}x{self.n_y}")
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError(f"pixel pitch must be positive, got dx={self.dx}, dy={self.dy}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_y, self.n_x)

    @property
    def n_pixels(self) -> int:
        return self.n_x * self.n_y

    def x(self) -> NDArray[np.float64]:
        return np.arange(self.n_x) * self.dx

    def y(self) -> NDArray[np.float64]:
        return np.arange(self.n_y) * self.dy

    def center(self) -> tuple[float, float]:
        """Physical position of the pixel (n_y // 2, n_x // 2)."""
        return ((self.n_x // 2) * self.dx, (self.n_y // 2) * self.dy)

    def extent(self) -> tuple[float, float]:
        """Physical size covered by pixel positions, (width, height)."""
        return ((self.n_x - 1) * self.dx, (self.n_y - 1) * self.dy)


@dataclass
class PsfField:
    """Sampled point-spread field produced by :func:`synth_psf`."""

    grid: Grid2D
    values: NDArray[np.float64]      # (n_y, n_x), K
    center: tuple[float, float]      # (x, y) of the source, m
    eval_time: float                 # s
    n_dim: int
    series_terms: int
    truncation_warning: bool = field(default=False)

    def peak_index(self) -> tuple[int, int]:
        return np.unravel_index(int(np.argmax(self.values)), self.values.shape)

    def fwhm_pixels(self) -> float:
        """Full width at half maximum along x through the peak, in pixels.

        Measured on the sampled field by linear interpolation of the
        half-maximum crossings; independent of the analytic formula.
        """
        iy, ix = self.peak_index()
        row = self.values[iy]
        half = row[ix] / 2.0
        left = ix
        while left > 0 and row[left] > half:
            left -= 1
        right = ix
        while right < row.size - 1 and row[right] > half:
            right += 1
        # interpolate the crossings; clamp at grid edge if never crossed
        if row[left] <= half < row[left + 1]:
            xl = left + (half - row[left]) / (row[left + 1] - row[left])
        else:
            xl = float(left)
        if row[right] <= half < row[right - 1]:
            xr = right - (half - row[right]) / (row[right - 1] - row[right])
        else:
            xr = float(right)
        return xr - xl


def diffusion_length(plate: PlateSpec, t: float) -> float:
    """Thermal diffusion length sqrt(alpha * t) in m."""
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    return float(np.sqrt(plate.diffusivity * t))


def psf_sigma(plate: PlateSpec, t: float) -> float:
    """Gaussian standard deviation sqrt(2 * alpha * t) of the spread at time t."""
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    return float(np.sqrt(2.0 * plate.diffusivity * t))


def fwhm_diameter(plate: PlateSpec, t: float) -> float:
    """Full width at half maximum 4*sqrt(ln2 * alpha * t) of the spread, in m.

    Equals 2*sqrt(2*ln2) times :func:`psf_sigma`.
    """
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    return float(4.0 * np.sqrt(np.log(2.0) * plate.diffusivity * t))


def _series_parts(plate: PlateSpec, series_terms: int):
    """Weights R^(2n+1) and squared image depths (2nL)^2 for n in
    [-series_terms, series_terms].  R = 0 would send negative-n weights
    to infinity; physically there are no reflected images then, so those
    terms are dropped."""
    n = np.arange(-series_terms, series_terms + 1)
    r = plate.reflection_coeff
    with np.errstate(divide="ignore"):
        weights = np.where(n >= 0, r ** (2 * n + 1), r ** (2.0 * n + 1))
    weights = np.where(np.isfinite(weights), weights, 0.0)
    depths_sq = (2.0 * n * plate.thickness) ** 2
    return weights, depths_sq


def image_series(plate: PlateSpec, tau: float | NDArray, series_terms: int):
    """Image-source sum over mirror planes at depth spacing 2nL.

    Term n carries weight R^(2n+1) * exp(-(2nL)^2 / (4 alpha tau)) for
    n in [-series_terms, series_terms].

    Returns
    -------
    total : ndarray or float
        Series value for each tau.
    tail_ratio : float
        Magnitude of the outermost term relative to the n=0 term,
        maximised over tau.  Large values mean the truncation is felt.
    """
    scalar = np.asarray(tau).ndim == 0
    tau_arr = np.atleast_1d(np.asarray(tau, dtype=float))
    weights, depths_sq = _series_parts(plate, series_terms)
    gauss = np.exp(-depths_sq[:, None] / (4.0 * plate.diffusivity * tau_arr[None, :]))
    terms = weights[:, None] * gauss
    total = terms.sum(axis=0)
    if series_terms == 0:
        tail_ratio = 0.0
    else:
        center = terms[series_terms]
        with np.errstate(invalid="ignore", divide="ignore"):
            ratios = np.abs(terms[[0, -1]]) / np.abs(center)
        tail_ratio = float(np.nanmax(ratios)) if np.isfinite(ratios).any() else 0.0
    if scalar:
        return float(total[0]), tail_ratio
    return total, tail_ratio


def psf_instant(
    plate: PlateSpec,
    excitation: ExcitationTemporal,
    r_sq: NDArray[np.float64],
    tau: float,
    n_dim: int,
    series_terms: int,
) -> NDArray[np.float64]:
    """Surface temperature response to a unit-time impulse, at age tau.

    ``r_sq`` holds squared in-plane distances from the source in m^2.
    """
    tau = max(tau, T_MIN)
    alpha = plate.diffusivity
    pref = (
        2.0
        * excitation.peak_power
        / (plate.heat_capacity * plate.density * (4.0 * np.pi * alpha * tau) ** (n_dim / 2.0))
    )
    series, _ = image_series(plate, tau, series_terms)
    return pref * series * np.exp(-r_sq / (4.0 * alpha * tau))


def synth_psf(
    plate: PlateSpec,
    excitation: ExcitationTemporal,
    grid: Grid2D,
    center: tuple[float, float],
    eval_time: float,
    n_dim: int = 2,
    series_terms: int = 20,
    quad_rtol: float = 1e-8,
) -> PsfField:
    """Synthesise the thermal point-spread field at a given evaluation time.

    The impulse response is convolved in time with the rectangular pulse
    by adaptive trapezoidal quadrature: the response age tau runs over
    [max(eval_time - pulse_duration, T_MIN), eval_time], and nodes are
    doubled in log(tau) until the field changes by less than
    ``quad_rtol`` in max norm.  Quadrature in log(tau) keeps the
    t^(-n_dim/2) prefactor harmless near tau = 0.

    Parameters
    ----------
    center : (float, float)
        Source position (x, y) in m.  Need not be a grid node.
    eval_time : float
        Time since pulse start, s.  Must be positive.
    n_dim : int
        Dimensionality of the diffusive spread, 1, 2 or 3.
    series_terms : int
        Image-source truncation; terms n in [-series_terms, series_terms].

    Returns
    -------
    PsfField
        Non-negative field peaking at the grid cell containing ``center``.
        ``truncation_warning`` is set when the outermost image term still
        exceeds 1e-9 of the central one.
    """
    if eval_time <= 0:
        raise ValueError(f"eval_time must be positive, got {eval_time}")
    if n_dim not in (1, 2, 3):
        raise ValueError(f"n_dim must be 1, 2 or 3, got {n_dim}")
    if series_terms < 0:
        raise ValueError(f"series_terms must be non-negative, got {series_terms}")

    cx, cy = center
    xs = grid.x() - cx
    ys = grid.y() - cy
    r_sq = ys[:, None] ** 2 + xs[None, :] ** 2

    tau_lo = max(eval_time - excitation.pulse_duration, T_MIN)
    tau_hi = eval_time
    if tau_hi <= tau_lo:
        raise ValueError("evaluation window collapsed; eval_time too close to T_MIN")

    alpha = plate.diffusivity
    cp_rho = plate.heat_capacity * plate.density

    weights, depths_sq = _series_parts(plate, series_terms)

    def integrand(tau: NDArray[np.float64]) -> NDArray[np.float64]:
        # value of the impulse response on the whole grid for each tau,
        # already multiplied by tau for the log-variable substitution
        pref = 2.0 * excitation.peak_power / (cp_rho * (4.0 * np.pi * alpha * tau) ** (n_dim / 2.0))
        series = (
            weights[:, None] * np.exp(-depths_sq[:, None] / (4.0 * alpha * tau[None, :]))
        ).sum(axis=0)
        spatial = np.exp(-r_sq[None, :, :] / (4.0 * alpha * tau[:, None, None]))
        return (pref * series * tau)[:, None, None] * spatial

    # trapezoid in s = log(tau): integral f dtau = integral f*tau ds
    s_lo, s_hi = np.log(tau_lo), np.log(tau_hi)
    n_intervals = 8
    nodes = np.exp(np.linspace(s_lo, s_hi, n_intervals + 1))
    samples = integrand(nodes)
    h = (s_hi - s_lo) / n_intervals
    estimate = h * (samples[0] / 2 + samples[1:-1].sum(axis=0) + samples[-1] / 2)
    max_doublings = 14
    for _ in range(max_doublings):
        n_intervals *= 2
        h = (s_hi - s_lo) / n_intervals
        new_s = s_lo + h * np.arange(1, n_intervals, 2)
        new_samples = integrand(np.exp(new_s))
        refined = estimate / 2 + h * new_samples.sum(axis=0)
        scale = float(np.max(np.abs(refined)))
        delta = float(np.max(np.abs(refined - estimate)))
        estimate = refined
        if scale == 0.0 or delta <= quad_rtol * scale:
            break
    else:
        warnings.warn(
            f"psf quadrature did not reach rtol {quad_rtol:g} after {max_doublings} doublings",
            RuntimeWarning,
        )

    _, tail_ratio = image_series(plate, [tau_lo, tau_hi], series_terms)
    truncated = bool(tail_ratio > TRUNCATION_WARN_RATIO)
    if truncated:
        warnings.warn(
            f"image-source series truncated at n=+-{series_terms} with tail ratio "
            f"{tail_ratio:.2e}; increase series_terms",
            RuntimeWarning,
        )
    return PsfField(
        grid=grid,
        values=estimate,
        center=(cx, cy),
        eval_time=eval_time,
        n_dim=n_dim,
        series_terms=series_terms,
        truncation_warning=truncated,
    )
