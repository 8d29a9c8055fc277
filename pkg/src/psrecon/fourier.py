"""Joint sparse reconstruction in the frequency domain.

Moving the blur to Fourier space turns every measurement block into a
diagonal operator: the x-update becomes an elementwise division and the
whole iteration costs O(M log M) per sweep.  The price is circular
boundary conditions; a cosine edge taper (on by default) damps the
wrap-around seams that creates on non-periodic data.

FFT convention: numpy's unnormalised forward transform with the 1/M
factor on the inverse.  Round trips are exact to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import NumericalError, UsageError
from .phantom import MeasurementSet
from .solver import (
    LCurveResult,
    ReconConfig,
    ReconResult,
    admm_drive,
    norm_l21,
    operator_scale,
    prox_l21_l2,
    select_rho_lcurve,
)
from .thermal import PsfField

# Hard ceiling on how much imaginary leakage the final map may carry
# relative to its real part before the solve is declared broken.
IMAG_RESIDUE_MAX = 1e-6


def quadrant_swap(field: NDArray) -> NDArray:
    """Move a grid-centered kernel so its center lands on index (0, 0).

    Splits each axis at floor(n/2); for odd sizes this is the exact
    inverse of the centering shift.  Same as np.fft.ifftshift.
    """
    return np.fft.ifftshift(np.asarray(field))


@dataclass
class SpectralOperator:
    """Diagonalised blur: element k of ``spectrum`` multiplies frequency
    bin k of the vectorized field."""

    spectrum: NDArray[np.complex128]  # (n_y, n_x)
    shape: tuple[int, int]

    @classmethod
    def from_psf(cls, psf_values: NDArray) -> "SpectralOperator":
        values = np.asarray(psf_values, dtype=float)
        if values.ndim != 2:
            raise ValueError(f"expected a 2-D field, got shape {values.shape}")
        spectrum = np.conj(np.fft.fft2(quadrant_swap(values)))
        return cls(spectrum=spectrum, shape=values.shape)

    def diag(self) -> NDArray[np.complex128]:
        """The operator's diagonal as a flat vector, row-major."""
        return self.spectrum.ravel(order="C")


def spectral_forward(op: SpectralOperator, a: NDArray) -> NDArray:
    """Apply the diagonal operator: ifft2(spectrum * fft2(a)).

    Accepts batched stacks (..., n_y, n_x).  Real input returns the real
    part; for the symmetric kernels this operator is built from, the
    product is a circular 2-D convolution.
    """
    a = np.asarray(a)
    if a.shape[-2:] != op.shape:
        raise ValueError(f"field shape {a.shape[-2:]} != operator shape {op.shape}")
    out = np.fft.ifft2(op.spectrum * np.fft.fft2(a, axes=(-2, -1)), axes=(-2, -1))
    if not np.iscomplexobj(a):
        return out.real
    return out


def _edge_taper(shape: tuple[int, int], width_px: float) -> NDArray[np.float64]:
    """Separable window: half-cosine ramps of the given width at each
    edge, flat 1 in the middle."""

    def ramp(n: int) -> NDArray[np.float64]:
        w = np.ones(n)
        k = int(min(np.ceil(width_px), n // 2))
        if k > 0:
            t = (np.arange(k) + 1.0) / (k + 1.0)
            profile = 0.5 * (1.0 - np.cos(np.pi * t))
            w[:k] = profile
            w[n - k :] = profile[::-1]
        return w

    return np.outer(ramp(shape[0]), ramp(shape[1]))


def reconstruct_fft(
    data: MeasurementSet,
    psf: PsfField,
    config: ReconConfig,
    taper: bool = True,
) -> ReconResult:
    """Reconstruct the aggregate defect map with the FFT-domain method.

    Same objective and ADMM iteration as the stacked-matrix route, but x,
    z and u live in the frequency domain: the x-update is the elementwise
    division (conj(A)*b + rho*(z-u)) / (|A|^2 + rho), and the group prox
    is applied in the spatial domain via an ifft/fft round trip each
    iteration.  Because every spatial iterate is real, the state is kept
    as half spectra (rfft layout) and transformed with rfft2/irfft2; the
    fixed point is the same as with full transforms, the asymmetric dual
    transient those would carry just decays to zero anyway.  Kernel and
    data are first divided by the kernel's spectral norm (see
    ``operator_scale``), so the penalty weights are dimensionless while
    the minimiser keeps physical units.  ``taper`` applies the cosine
    edge window to the data first; switching it off exposes wrap-around
    seams on non-periodic frames but leaves amplitudes near the boundary
    untouched.
    """
    if psf.grid.shape != data.grid.shape:
        raise UsageError(
            f"psf grid {psf.grid.shape} does not match data grid {data.grid.shape}"
        )
    grid = data.grid
    n = grid.n_pixels
    n_m = data.n_m
    n_half = grid.n_x // 2 + 1
    scale = operator_scale(psf.values)
    frames = np.asarray(data.frames, dtype=np.float64) / scale
    if taper:
        frames = frames * _edge_taper(grid.shape, psf.fwhm_pixels() / 2.0)[None, :, :]

    a_hat = np.conj(np.fft.rfft2(quadrant_swap(psf.values)))[None, :, :] / scale
    b = np.fft.rfft2(frames, axes=(-2, -1))
    gain = np.abs(a_hat) ** 2
    rhs = np.conj(a_hat) * b
    recip_cache: dict[float, NDArray] = {}
    # Parseval weights for the rfft layout: interior columns stand for a
    # conjugate pair, the DC (and even-width Nyquist) column for itself.
    pw = np.full((1, grid.n_y, n_half), 2.0)
    pw[..., 0] = 1.0
    if grid.n_x % 2 == 0:
        pw[..., -1] = 1.0

    lam21, lam2 = config.lambda_21, config.lambda_2

    def x_update(v: NDArray, rho: float) -> NDArray:
        recip = recip_cache.get(rho)
        if recip is None:
            recip = 1.0 / (gain + rho)
            recip_cache[rho] = recip
        out = v * rho
        out += rhs
        out *= recip
        return out

    # The prox remembers the regularizer values of the iterate it
    # returned (free by-products of the per-pixel shrink), so the
    # objective costs one spectral residual and no transforms.
    last: dict = {"z": None, "l21": 0.0, "fro2": 0.0}

    def make_prox(rho: float):
        thr = lam21 / rho
        damp = 1.0 / (1.0 + lam2 / rho)

        def prox(l: NDArray) -> NDArray:
            spatial = np.fft.irfft2(l, s=grid.shape, axes=(-2, -1))
            # Group norm over the measurement axis, one group per pixel:
            # identical math to prox_l21_l2 on the (n_pixels, n_m) layout.
            g = np.sqrt(np.einsum("mij,mij->ij", spatial, spatial))
            with np.errstate(divide="ignore", invalid="ignore"):
                factor = np.maximum(0.0, 1.0 - thr / g) * damp
            factor[g == 0.0] = 0.0
            spatial *= factor[None, :, :]
            z = np.fft.rfft2(spatial, axes=(-2, -1))
            shrunk_norms = factor * g
            last["z"] = z
            last["l21"] = float(shrunk_norms.sum())
            last["fro2"] = float(np.vdot(shrunk_norms, shrunk_norms).real)
            return z

        return prox

    def spatialize(z: NDArray) -> tuple[NDArray, NDArray]:
        pred = np.fft.irfft2(a_hat * z, s=grid.shape, axes=(-2, -1))
        spatial = np.fft.irfft2(z, s=grid.shape, axes=(-2, -1))
        return pred, spatial

    def objective(z: NDArray) -> float:
        if last["z"] is z:
            # Parseval on the half spectrum gives the spatial residual
            # exactly: ||irfft2(A z - b)||^2 = sum(pw |A z - b|^2) / (n_y n_x).
            r = a_hat * z
            r -= b
            resid2 = float(np.sum(pw * (r.real**2 + r.imag**2))) / n
            l21_val, fro2 = last["l21"], last["fro2"]
        else:
            pred, spatial = spatialize(z)
            resid2 = float(np.sum((pred - frames) ** 2))
            l21_val = norm_l21(spatial.reshape(n_m, n).T)
            fro2 = float(np.sum(spatial**2))
        return float(0.5 * resid2 + lam21 * l21_val + 0.5 * lam2 * fro2)

    def lift_field(f: NDArray) -> NDArray:
        # init draws happen in the spatial domain so the spectral solver
        # starts from the same seeded field as the matrix one
        return np.fft.rfft2(f, axes=(-2, -1))

    field_shape = (n_m, grid.n_y, grid.n_x)

    lcurve: LCurveResult | None = None
    rho = config.rho
    if rho is None:

        def evaluate(r: float, iters: int) -> tuple[float, float]:
            probe_cfg = ReconConfig(
                lambda_21=lam21,
                lambda_2=lam2,
                rho=r,
                n_iter=iters,
                eval_time=config.eval_time,
                init_seed=config.init_seed,
            )
            z, _ = admm_drive(
                x_update,
                make_prox(r),
                probe_cfg,
                shape=(n_m, grid.n_y, n_half),
                rho=r,
                dtype=np.complex128,
                draw_shape=field_shape,
                lift=lift_field,
            )
            pred, spatial = spatialize(z)
            return float(np.linalg.norm(pred - frames)), float(np.linalg.norm(spatial))

        lcurve = select_rho_lcurve(evaluate, config.rho_candidates, n_iter=config.n_iter)
        rho = lcurve.rho

    z, diags = admm_drive(
        x_update,
        make_prox(rho),
        config,
        shape=(n_m, grid.n_y, n_half),
        rho=rho,
        objective=objective,
        dtype=np.complex128,
        draw_shape=field_shape,
        lift=lift_field,
    )

    # Rebuild the full spectrum from the half layout and invert with the
    # complex transform: its imaginary residue checks that the final
    # state is the spectrum of a genuinely real field.
    full = np.empty((n_m, grid.n_y, grid.n_x), dtype=np.complex128)
    full[..., :n_half] = z
    kx = np.arange(n_half, grid.n_x)
    flip_y = z[:, (grid.n_y - np.arange(grid.n_y)) % grid.n_y, :]
    full[..., kx] = np.conj(flip_y[..., grid.n_x - kx])
    per_meas_c = np.fft.ifft2(full, axes=(-2, -1))
    imag_norm = float(np.linalg.norm(per_meas_c.imag))
    real_norm = float(np.linalg.norm(per_meas_c.real))
    if imag_norm > IMAG_RESIDUE_MAX * max(real_norm, 1e-300):
        raise NumericalError(
            f"imaginary residue {imag_norm:.3e} exceeds {IMAG_RESIDUE_MAX:g} of the real "
            f"part ({real_norm:.3e}); spectral state is inconsistent with a real field"
        )
    per_meas = per_meas_c.real
    return ReconResult(
        a_rec=per_meas.sum(axis=0),
        per_measurement=per_meas,
        diagnostics=diags,
        method="fft",
        config=config,
        lcurve=lcurve,
    )
