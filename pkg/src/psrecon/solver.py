"""Shared ADMM machinery for the joint sparse reconstruction methods.

The reconstruction objective couples a quadratic data term with a
group-sparsity penalty (l2,1 across the measurement stack, grouped per
pixel) and a ridge term.  Both reconstruction methods minimise it with
scaled ADMM; they differ only in how the quadratic x-update is solved,
so the iteration lives here and takes the x-update as a callable.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .errors import DivergenceError, NumericalError, UsageError


@dataclass(frozen=True)
class ReconConfig:
    """Solver settings shared by both reconstruction methods.

    ``lambda_21`` and ``lambda_2`` are the raw penalty weights from the
    objective; the prox rescales them by 1/rho internally as scaled ADMM
    requires.  ``rho_candidates`` is only consulted when rho is None, in
    which case an L-curve sweep picks it.
    """

    lambda_21: float
    lambda_2: float
    rho: float | None = 16.0
    n_iter: int = 400
    eval_time: float = 0.5          # s, which time slice to reconstruct
    init_seed: int = 0
    stop_rtol: float | None = None  # early-exit residual tolerance, off by default
    rho_candidates: tuple[float, ...] = tuple(float(r) for r in np.logspace(-2, 4, 7))

    def __post_init__(self):
        if self.lambda_21 < 0 or self.lambda_2 < 0:
            raise UsageError("penalty weights must be non-negative")
        if self.rho is not None and self.rho <= 0:
            raise UsageError(f"rho must be positive, got {self.rho}")
        if self.n_iter < 1:
            raise UsageError(f"n_iter must be at least 1, got {self.n_iter}")
        if self.eval_time <= 0:
            raise UsageError(f"eval_time must be positive, got {self.eval_time}")


@dataclass
class SolveDiagnostics:
    """Per-iteration history of one ADMM run."""

    objective: NDArray[np.float64]        # objective at z, per iteration
    primal_residual: NDArray[np.float64]  # ||x - z||
    dual_residual: NDArray[np.float64]    # rho * ||z - z_prev||
    objective_init: float                 # objective at the random start
    wall_time: float                      # s
    n_iter_run: int
    rho: float
    state_norm: float = np.nan            # ||z|| at exit, solver state units
    converged: bool = False

    def relative_primal(self) -> float:
        """Final ||x - z|| over ||z||, the solver's convergence figure."""
        return float(self.primal_residual[-1] / max(self.state_norm, 1e-300))


@dataclass
class ReconResult:
    """Aggregate defect map plus everything needed to audit the solve."""

    a_rec: NDArray[np.float64]            # (n_y, n_x), summed over measurements
    per_measurement: NDArray[np.float64]  # (n_m, n_y, n_x)
    diagnostics: SolveDiagnostics
    method: str
    config: ReconConfig
    lcurve: "LCurveResult | None" = None  # set when rho was chosen automatically


def operator_scale(psf_values: NDArray) -> float:
    """Spectral norm of the circular-convolution operator with this kernel.

    Both reconstruction methods divide the kernel and the data by this
    scale before solving, which leaves the minimiser in physical units
    untouched but makes the penalty weights dimensionless: lambda values
    are read against an operator of unit peak gain and transfer across
    grids, evaluation times and excitation powers.
    """
    s = float(np.abs(np.fft.rfft2(np.asarray(psf_values, dtype=float))).max())
    if not np.isfinite(s) or s <= 0.0:
        raise NumericalError("point-spread field has no spectral energy to scale by")
    return s


def norm_l21(a: NDArray) -> float:
    """Sum over pixels of the Euclidean norm across measurements.

    ``a`` has shape (n_pixels, n_m): one row per pixel location, one
    column per measurement.
    """
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D (n_pixels, n_m) array, got shape {a.shape}")
    return float(np.sqrt((np.abs(a) ** 2).sum(axis=1)).sum())


def prox_l21_l2(l: NDArray, lambda_21: float, lambda_2: float) -> NDArray:
    """Proximal map of lambda_21 * l2,1 + (lambda_2 / 2) * l2^2.

    Rows are pixel groups: each row is shrunk toward zero by the group
    soft threshold max(0, 1 - lambda_21/||row||) and then damped by
    1/(1 + lambda_2).  Zero rows map to zero.
    """
    if lambda_21 < 0 or lambda_2 < 0:
        raise ValueError("shrinkage weights must be non-negative")
    l = np.asarray(l, dtype=float)
    if l.ndim != 2:
        raise ValueError(f"expected a 2-D (n_pixels, n_m) array, got shape {l.shape}")
    norms = np.sqrt((l**2).sum(axis=1, keepdims=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        shrink = np.maximum(0.0, 1.0 - lambda_21 / norms)
    shrink = np.where(norms > 0, shrink, 0.0)
    return shrink * l / (1.0 + lambda_2)


def admm_drive(
    x_update: Callable[[NDArray, float], NDArray],
    prox: Callable[[NDArray], NDArray],
    config: ReconConfig,
    shape: tuple[int, ...],
    rho: float,
    objective: Callable[[NDArray], float] | None = None,
    dtype=np.float64,
    draw_shape: tuple[int, ...] | None = None,
    lift: Callable[[NDArray], NDArray] | None = None,
) -> tuple[NDArray, SolveDiagnostics]:
    """Run scaled ADMM and return the final z iterate with diagnostics.

    ``x_update(v, rho)`` must return argmin of the data term plus
    (rho/2)*||x - v||^2; ``prox`` maps the spatial/spectral point
    x + u to z and already carries the lambda/rho scaling.  x and z
    are initialised from uniform [0, 1) field draws seeded by
    ``config.init_seed``, with u = x - z.  Solvers whose state is not
    the field itself pass ``draw_shape`` (the field shape) and ``lift``
    (field to state), so every method starts from the same seeded field
    and their iterate paths stay comparable.
    """
    rng = np.random.default_rng(config.init_seed)

    def _init() -> NDArray:
        f = rng.random(shape if draw_shape is None else draw_shape)
        return (f if lift is None else lift(f)).astype(dtype)

    x = _init()
    z = _init()
    u = x - z

    n_iter = config.n_iter
    obj_hist = np.full(n_iter, np.nan)
    primal = np.full(n_iter, np.nan)
    dual = np.full(n_iter, np.nan)
    obj_init = float(objective(z)) if objective is not None else np.nan

    t0 = time.perf_counter()
    converged = False
    k = 0
    for k in range(n_iter):
        x = x_update(z - u, rho)
        z_prev = z
        z = prox(x + u)
        u += x
        u -= z
        primal[k] = np.linalg.norm((x - z).ravel())
        dual[k] = rho * np.linalg.norm((z - z_prev).ravel())
        if objective is not None:
            obj_hist[k] = objective(z)
        if not (np.isfinite(primal[k]) and np.isfinite(dual[k])):
            raise DivergenceError(k)
        if config.stop_rtol is not None:
            z_norm = np.linalg.norm(z.ravel())
            scale = max(z_norm, 1e-30)
            if primal[k] <= config.stop_rtol * scale and dual[k] <= config.stop_rtol * scale:
                converged = True
                k += 1
                break
    else:
        k = n_iter
    wall = time.perf_counter() - t0

    diags = SolveDiagnostics(
        objective=obj_hist[:k],
        primal_residual=primal[:k],
        dual_residual=dual[:k],
        objective_init=obj_init,
        wall_time=wall,
        n_iter_run=k,
        rho=rho,
        state_norm=float(np.linalg.norm(z.ravel())),
        converged=converged,
    )
    return z, diags


@dataclass
class LCurveResult:
    rho: float
    candidates: NDArray[np.float64]
    residual_norms: NDArray[np.float64]
    solution_norms: NDArray[np.float64]
    curvatures: NDArray[np.float64]
    fallback: bool = False


def _menger_curvature(p1, p2, p3) -> float:
    """Curvature of the circle through three points: 4*area / product of
    side lengths.  Signed by turn direction."""
    cross = (p2[0] - p1[0]) * (p3[1] - p1[1]) - (p2[1] - p1[1]) * (p3[0] - p1[0])
    d12 = np.hypot(p2[0] - p1[0], p2[1] - p1[1])
    d23 = np.hypot(p3[0] - p2[0], p3[1] - p2[1])
    d13 = np.hypot(p3[0] - p1[0], p3[1] - p1[1])
    denom = d12 * d23 * d13
    if denom == 0.0:
        return 0.0
    return float(2.0 * cross / denom)


def select_rho_lcurve(
    evaluate: Callable[[float, int], tuple[float, float]],
    candidates,
    n_iter: int = 100,
) -> LCurveResult:
    """Pick the ADMM penalty rho at the corner of the L-curve.

    ``evaluate(rho, n_iter)`` must run a short solve and return
    (residual_norm, solution_norm).  Each candidate is probed with
    max(25, n_iter // 4) iterations; the corner is the interior point of
    maximum discrete (Menger) curvature of the log-log curve.  A flat or
    degenerate curve falls back to the median candidate, flagged and
    warned about.
    """
    candidates = np.asarray(sorted(float(c) for c in candidates))
    if candidates.size < 3:
        raise UsageError(f"need at least 3 rho candidates, got {candidates.size}")
    if np.any(candidates <= 0):
        raise UsageError("rho candidates must be positive")

    probe_iters = max(25, n_iter // 4)
    res = np.empty(candidates.size)
    sol = np.empty(candidates.size)
    for i, rho in enumerate(candidates):
        r, s = evaluate(float(rho), probe_iters)
        res[i], sol[i] = r, s

    with np.errstate(divide="ignore"):
        log_res = np.log10(np.maximum(res, 1e-300))
        log_sol = np.log10(np.maximum(sol, 1e-300))
    pts = np.column_stack([log_res, log_sol])
    curv = np.zeros(candidates.size)
    for i in range(1, candidates.size - 1):
        curv[i] = _menger_curvature(pts[i - 1], pts[i], pts[i + 1])

    best = int(np.argmax(np.abs(curv)))
    fallback = np.abs(curv[best]) < 1e-12 or not np.all(np.isfinite(pts))
    if fallback:
        warnings.warn(
            "degenerate L-curve (collinear or non-finite points); using the median candidate",
            RuntimeWarning,
        )
        best = candidates.size // 2
    return LCurveResult(
        rho=float(candidates[best]),
        candidates=candidates,
        residual_norms=res,
        solution_norms=sol,
        curvatures=curv,
        fallback=bool(fallback),
    )
