"""Conventional thermography baselines to compare reconstructions against."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import UsageError


def difference_thermogram(frame: NDArray, reference: NDArray) -> NDArray:
    """Plain elementwise subtraction frame - reference."""
    frame = np.asarray(frame)
    reference = np.asarray(reference)
    if frame.shape != reference.shape:
        raise ValueError(f"shape mismatch: {frame.shape} vs {reference.shape}")
    return frame - reference


@dataclass
class PptResult:
    """Single-bin pulse-phase result: amplitude and phase images at the
    analysis frequency actually used (nearest FFT bin)."""

    amplitude: NDArray[np.float64]  # (n_y, n_x), >= 0
    phase: NDArray[np.float64]      # (n_y, n_x), radians in (-pi, pi]
    frequency: float                # Hz, bin center
    bin_index: int


def ppt(
    series: NDArray,
    frame_rate: float,
    frequency: float,
    window: str | None = None,
) -> PptResult:
    """Pulse-phase thermography: per-pixel temporal FFT at one frequency.

    ``series`` has shape (n_t, n_y, n_x).  The requested frequency is
    snapped to the nearest FFT bin k = round(frequency * n_t / frame_rate)
    and the complex coefficient there yields amplitude |X_k| and phase
    arg(X_k) per pixel.  ``window='half-cosine'`` multiplies the series
    by a cosine half-wave that tapers the decaying tail to zero.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 3:
        raise ValueError(f"series must be (n_t, n_y, n_x), got shape {series.shape}")
    if frame_rate <= 0:
        raise UsageError(f"frame_rate must be positive, got {frame_rate}")
    if frequency < 0:
        raise UsageError(f"frequency must be non-negative, got {frequency}")
    nyquist = frame_rate / 2.0
    if frequency > nyquist:
        raise UsageError(
            f"frequency {frequency:g} Hz exceeds the Nyquist limit {nyquist:g} Hz"
        )
    n_t = series.shape[0]
    if window is None:
        data = series
    elif window == "half-cosine":
        w = np.cos(np.pi * np.arange(n_t) / (2.0 * max(n_t - 1, 1)))
        data = series * w[:, None, None]
    else:
        raise UsageError(f"unknown window {window!r}; expected None or 'half-cosine'")

    k = int(round(frequency * n_t / frame_rate))
    k = min(k, n_t // 2)
    coeff = np.fft.fft(data, axis=0)[k]
    return PptResult(
        amplitude=np.abs(coeff),
        phase=np.angle(coeff),
        frequency=k * frame_rate / n_t,
        bin_index=k,
    )
