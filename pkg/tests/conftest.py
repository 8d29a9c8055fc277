"""Shared fixtures: one steel plate, one excitation, small grids.

Heavier end-to-end runs live in test_acceptance.py with their own
module-scoped fixtures so the unit modules stay fast.
"""

import warnings

import numpy as np
import pytest

from psrecon.phantom import DefectMap, forward_simulate, plan_triangular_grid
from psrecon.thermal import ExcitationTemporal, Grid2D, PlateSpec, synth_psf


@pytest.fixture(scope="session")
def plate():
    return PlateSpec(
        thickness=4.5e-3,          # m
        diffusivity=3.76e-6,       # m^2/s
        density=7950.0,            # kg/m^3
        heat_capacity=502.0,       # J/(kg K)
        reflection_coeff=1.0,
    )


@pytest.fixture(scope="session")
def excitation():
    return ExcitationTemporal(
        pulse_duration=0.020,      # s
        peak_power=15.0,           # W
        frame_rate=100.0,          # Hz
    )


@pytest.fixture(scope="session")
def grid32():
    return Grid2D(n_x=32, n_y=32, dx=2.5e-4, dy=2.5e-4)


@pytest.fixture(scope="session")
def small_problem(plate, excitation, grid32):
    """32x32 phantom with one interior defect, 9 spots, 40 dB noise.

    Returns (data, psf, truth).  Session-scoped: several modules reuse
    it for reconstruction smoke tests.
    """
    g = grid32
    truth = DefectMap.from_rects(
        g, [(13 * g.dx, 14 * g.dy, 4 * g.dx, 4 * g.dy)], 0.4
    )
    plan = plan_triangular_grid((2.5e-3, 2.5e-3, 3.0e-3, 3.0e-3), 1.2e-3, 3.75e-4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        clean = forward_simulate(plate, excitation, plan, truth, 0.1, 0.0, seed=5)
        rms = float(np.sqrt(np.mean(np.asarray(clean.frames, float) ** 2)))
        data = forward_simulate(
            plate, excitation, plan, truth, 0.1, noise_sigma=rms / 100.0, seed=5
        )
        psf = synth_psf(plate, excitation, g, g.center(), 0.1)
    return data, psf, truth
