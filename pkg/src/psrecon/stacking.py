"""Joint sparse reconstruction via the stacked convolution-matrix route.

Frames are flattened row-major and the 2-D blur is modelled as a 1-D
convolution of the flattened vectors: each measurement block is the full
convolution matrix of the flattened point-spread field, lower-triangular
Toeplitz of shape (2N-1, N).  Flattening conflates the rows (a source
near a row edge leaks into the adjacent row on the far side); a strict
2-D variant is available for comparison at extra setup cost.

The blocks only ever exist implicitly: applying the operator is a 1-D
convolution with the length-N generator, and the normal-equations matrix
is symmetric Toeplitz built from the generator's autocorrelation, shared
by every measurement block and factorised exactly once per solve.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import cho_factor, cho_solve, toeplitz
from scipy.signal import fftconvolve
from scipy.sparse.linalg import LinearOperator, cg

from .errors import UsageError
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
from .thermal import Grid2D, PsfField

# Largest flattened size for which the dense Toeplitz normal matrix is
# factorised directly; beyond it the x-update falls back to CG.
DENSE_SOLVE_MAX_N = 4096

CG_RTOL = 1e-10


def vectorize(field: NDArray) -> NDArray:
    """Row-major flattening: y-major, x fastest."""
    field = np.asarray(field)
    if field.ndim != 2:
        raise ValueError(f"expected a 2-D field, got shape {field.shape}")
    return field.ravel(order="C")


def devectorize(vec: NDArray, grid: Grid2D) -> NDArray:
    vec = np.asarray(vec)
    if vec.ndim != 1 or vec.size != grid.n_pixels:
        raise ValueError(f"expected a vector of length {grid.n_pixels}, got shape {vec.shape}")
    return vec.reshape(grid.shape, order="C")


@dataclass
class ConvMatrix:
    """Implicit full 1-D convolution matrix of a length-N generator.

    Represents the (2N-1, N) matrix whose column j is the generator
    shifted down by j.  Only the generator is stored; products are
    evaluated as convolutions, so storage stays O(N) regardless of N.
    """

    generator: NDArray[np.float64]

    def __post_init__(self):
        self.generator = np.asarray(self.generator, dtype=float)
        if self.generator.ndim != 1 or self.generator.size < 1:
            raise ValueError("generator must be a non-empty 1-D vector")
        if not np.all(np.isfinite(self.generator)):
            raise ValueError("generator must be finite")

    @property
    def n(self) -> int:
        return self.generator.size

    @property
    def shape(self) -> tuple[int, int]:
        return (2 * self.n - 1, self.n)

    def matvec(self, a: NDArray) -> NDArray:
        """Full convolution, length 2N-1.  Columns of a 2-D input are
        treated as independent vectors."""
        a = np.asarray(a, dtype=float)
        if a.shape[0] != self.n:
            raise ValueError(f"operand length {a.shape[0]} != {self.n}")
        if a.ndim == 1:
            return fftconvolve(self.generator, a, mode="full")
        return fftconvolve(self.generator[:, None], a, mode="full", axes=0)

    def rmatvec(self, y: NDArray) -> NDArray:
        """Adjoint product H^T y, i.e. correlation with the generator."""
        y = np.asarray(y, dtype=float)
        if y.shape[0] != 2 * self.n - 1:
            raise ValueError(f"operand length {y.shape[0]} != {2 * self.n - 1}")
        flipped = self.generator[::-1]
        if y.ndim == 1:
            return fftconvolve(y, flipped, mode="valid")
        return fftconvolve(y, flipped[:, None], mode="valid", axes=0)

    def gram_first_col(self) -> NDArray[np.float64]:
        """First column of the symmetric Toeplitz matrix H^T H."""
        return np.correlate(self.generator, self.generator, mode="full")[self.n - 1 :]

    def toarray(self) -> NDArray[np.float64]:
        """Dense realisation, for tests and tiny problems only."""
        out = np.zeros(self.shape)
        for j in range(self.n):
            out[j : j + self.n, j] = self.generator
        return out


def build_conv_matrix(psf_vec: NDArray) -> ConvMatrix:
    """Wrap a flattened point-spread vector as the implicit stacked block."""
    return ConvMatrix(np.asarray(psf_vec))


def _aligned_generator(psf: PsfField) -> NDArray[np.float64]:
    """Flatten the PSF and roll its peak to index (N-1)//2.

    The data vector is embedded in the length 2N-1 stack with
    floor((N-1)/2) leading zeros, which centers a kernel whose flattened
    peak sits at (N-1)//2.  On odd-by-odd grids the grid-centered PSF
    already satisfies this and the roll is zero; on even grids it shifts
    by the half-row the flattening convention eats.
    """
    vec = vectorize(psf.values)
    n = vec.size
    grid = psf.grid
    center_flat = (grid.n_y // 2) * grid.n_x + (grid.n_x // 2)
    return np.roll(vec, (n - 1) // 2 - center_flat)


def _pad_stack(frames: NDArray, n: int) -> NDArray[np.float64]:
    """Embed flattened frames in the (2N-1, n_m) data stack with
    floor((N-1)/2) zeros before and ceil((N-1)/2) after."""
    n_m = frames.shape[0]
    lead = (n - 1) // 2
    out = np.zeros((2 * n - 1, n_m))
    for m in range(n_m):
        out[lead : lead + n, m] = frames[m].ravel(order="C")
    return out


class _FlatNormalSolver:
    """x-update for the flattened model: one shared factorisation of
    (H^T H + rho I), applied to all measurement blocks at once."""

    def __init__(self, h: ConvMatrix, t_stack: NDArray):
        self.h = h
        self.ht_t = h.rmatvec(t_stack)  # precomputed once per solve
        self._factor = None
        self._factor_rho = None

    def factor_for(self, rho: float):
        if self._factor is None or self._factor_rho != rho:
            n = self.h.n
            if n <= DENSE_SOLVE_MAX_N:
                gram = toeplitz(self.h.gram_first_col())
                gram[np.diag_indices_from(gram)] += rho
                self._factor = cho_factor(gram, check_finite=False)
            else:
                self._factor = None
            self._factor_rho = rho
        return self._factor

    def x_update(self, v: NDArray, rho: float) -> NDArray:
        rhs = self.ht_t + rho * v
        factor = self.factor_for(rho)
        if factor is not None:
            return cho_solve(factor, rhs, check_finite=False)
        return self._cg_solve(rhs, rho, x0=v)

    def _cg_solve(self, rhs: NDArray, rho: float, x0: NDArray) -> NDArray:
        n = self.h.n

        def normal_mv(x):
            return self.h.rmatvec(self.h.matvec(x)) + rho * x

        op = LinearOperator((n, n), matvec=normal_mv)
        out = np.empty_like(rhs)
        for j in range(rhs.shape[1]):
            sol, info = cg(op, rhs[:, j], x0=x0[:, j], rtol=CG_RTOL, maxiter=10 * n)
            if info != 0:
                warnings.warn(f"cg did not reach rtol {CG_RTOL:g} (info={info})", RuntimeWarning)
            out[:, j] = sol
        return out

    def apply(self, a: NDArray) -> NDArray:
        return self.h.matvec(a)


class _Strict2dNormalSolver:
    """x-update for the strict 2-D variant: dense normal matrix of the
    clipped same-mode 2-D convolution (block Toeplitz with Toeplitz
    blocks).  Exact but O(N^2) memory; guarded by DENSE_SOLVE_MAX_N."""

    def __init__(self, psf: PsfField, t_stack_frames: NDArray, scale: float = 1.0):
        grid = psf.grid
        n = grid.n_pixels
        if n > DENSE_SOLVE_MAX_N:
            raise UsageError(
                f"strict2d variant supports up to {DENSE_SOLVE_MAX_N} pixels, got {n}"
            )
        self.grid = grid
        self.kernel = psf.values / scale
        cy, cx = grid.n_y // 2, grid.n_x // 2
        ys, xs = np.divmod(np.arange(n), grid.n_x)
        dy = cy + ys[:, None] - ys[None, :]
        dx = cx + xs[:, None] - xs[None, :]
        valid = (dy >= 0) & (dy < grid.n_y) & (dx >= 0) & (dx < grid.n_x)
        dense = np.where(
            valid, self.kernel[np.clip(dy, 0, grid.n_y - 1), np.clip(dx, 0, grid.n_x - 1)], 0.0
        )
        self._dense = dense
        self.ht_t = dense.T @ np.stack([f.ravel() for f in t_stack_frames], axis=1)
        self._gram = dense.T @ dense
        self._factor = None
        self._factor_rho = None

    def factor_for(self, rho: float):
        if self._factor is None or self._factor_rho != rho:
            mat = self._gram.copy()
            mat[np.diag_indices_from(mat)] += rho
            self._factor = cho_factor(mat, check_finite=False)
            self._factor_rho = rho
        return self._factor

    def x_update(self, v: NDArray, rho: float) -> NDArray:
        return cho_solve(self.factor_for(rho), self.ht_t + rho * v, check_finite=False)

    def apply(self, a: NDArray) -> NDArray:
        return self._dense @ a


def reconstruct_sms(
    data: MeasurementSet,
    psf: PsfField,
    config: ReconConfig,
    variant: str = "flat",
) -> ReconResult:
    """Reconstruct the aggregate defect map with the stacked-matrix method.

    Solves, per measurement block and with joint per-pixel grouping,

        min_A 1/2 ||H A - T||_F^2 + lambda_21 ||A||_2,1 + lambda_2/2 ||A||_F^2

    by scaled ADMM; the returned map is the sum of the per-measurement
    sparse maps.  Kernel and data are first divided by the kernel's
    spectral norm (see ``operator_scale``), so the penalty weights are
    dimensionless while the minimiser keeps physical units.
    ``config.rho = None`` triggers an L-curve sweep over
    ``config.rho_candidates``.
    """
    if variant not in ("flat", "strict2d"):
        raise UsageError(f"unknown variant {variant!r}; expected 'flat' or 'strict2d'")
    if psf.grid.shape != data.grid.shape:
        raise UsageError(
            f"psf grid {psf.grid.shape} does not match data grid {data.grid.shape}"
        )
    grid = data.grid
    n = grid.n_pixels
    scale = operator_scale(psf.values)
    frames = np.asarray(data.frames, dtype=np.float64) / scale

    if variant == "flat":
        h = build_conv_matrix(_aligned_generator(psf) / scale)
        t_stack = _pad_stack(frames, n)
        solver = _FlatNormalSolver(h, t_stack)
        data_norm_target = t_stack
    else:
        solver = _Strict2dNormalSolver(psf, frames, scale=scale)
        data_norm_target = np.stack([f.ravel() for f in frames], axis=1)

    lam21, lam2 = config.lambda_21, config.lambda_2

    def objective(z: NDArray) -> float:
        resid = solver.apply(z) - data_norm_target
        return float(
            0.5 * np.sum(resid**2) + lam21 * norm_l21(z) + 0.5 * lam2 * np.sum(z**2)
        )

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
                solver.x_update,
                lambda l: prox_l21_l2(l, lam21 / r, lam2 / r),
                probe_cfg,
                shape=(n, data.n_m),
                rho=r,
            )
            resid = solver.apply(z) - data_norm_target
            return float(np.linalg.norm(resid)), float(np.linalg.norm(z))

        lcurve = select_rho_lcurve(evaluate, config.rho_candidates, n_iter=config.n_iter)
        rho = lcurve.rho

    z, diags = admm_drive(
        solver.x_update,
        lambda l: prox_l21_l2(l, lam21 / rho, lam2 / rho),
        config,
        shape=(n, data.n_m),
        rho=rho,
        objective=objective,
    )
    per_meas = z.T.reshape(data.n_m, grid.n_y, grid.n_x)
    return ReconResult(
        a_rec=per_meas.sum(axis=0),
        per_measurement=per_meas,
        diagnostics=diags,
        method=f"sms-{variant}" if variant != "flat" else "sms",
        config=config,
        lcurve=lcurve,
    )
