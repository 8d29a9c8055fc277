"""Super-resolution defect mapping from sequential laser-spot thermography.

Workflow: synthesise or load a set of blind spot measurements, build the
thermal point-spread field for the evaluation time, and invert the joint
sparse model with either the stacked-matrix ADMM or its FFT-domain
variant.  Baselines, scan planning, dataset I/O, and evaluation metrics
round out the toolkit; the ``psrecon`` command drives it from the shell.
"""

__version__ = "0.1.0"

from .thermal import (
    PlateSpec,
    ExcitationTemporal,
    Grid2D,
    PsfField,
    synth_psf,
    diffusion_length,
    fwhm_diameter,
    psf_sigma,
)
from .phantom import (
    DefectMap,
    ScanPlan,
    MeasurementSet,
    plan_triangular_grid,
    required_measurements_2d,
    forward_simulate,
    homogeneity_check,
)
from .solver import (
    ReconConfig,
    ReconResult,
    SolveDiagnostics,
    norm_l21,
    prox_l21_l2,
    admm_drive,
    select_rho_lcurve,
)
from .stacking import build_conv_matrix, reconstruct_sms, vectorize, devectorize
from .fourier import SpectralOperator, spectral_forward, quadrant_swap, reconstruct_fft
from .baselines import difference_thermogram, ppt, PptResult
from .datasets import write_dataset, read_dataset, open_dataset, render_map
from .metrics import (
    PairResult,
    SeparabilityReport,
    SupportReport,
    separability,
    support_metrics,
)

__all__ = [
    "PlateSpec",
    "ExcitationTemporal",
    "Grid2D",
    "PsfField",
    "synth_psf",
    "diffusion_length",
    "fwhm_diameter",
    "psf_sigma",
    "DefectMap",
    "ScanPlan",
    "MeasurementSet",
    "plan_triangular_grid",
    "required_measurements_2d",
    "forward_simulate",
    "homogeneity_check",
    "ReconConfig",
    "ReconResult",
    "SolveDiagnostics",
    "norm_l21",
    "prox_l21_l2",
    "admm_drive",
    "select_rho_lcurve",
    "build_conv_matrix",
    "reconstruct_sms",
    "vectorize",
    "devectorize",
    "SpectralOperator",
    "spectral_forward",
    "quadrant_swap",
    "reconstruct_fft",
    "difference_thermogram",
    "ppt",
    "PptResult",
    "write_dataset",
    "read_dataset",
    "open_dataset",
    "render_map",
    "PairResult",
    "SeparabilityReport",
    "SupportReport",
    "separability",
    "support_metrics",
    "__version__",
]
