"""Density-evolution analysis of spatially coupled CDMA multiuser detection."""
from .coupling import (
    CouplingSpec,
    CouplingSystem,
    build_circular,
    build_uncoupled,
    db_to_sigma2,
    sum_rate,
    validate,
)
from .de_core import DESolution, DEState, de_solve, de_step, free_energy, select_solution
from .scalar_channel import (
    INF,
    QuadratureSpec,
    kl_complex_gaussian,
    mse_inverse,
    mse_qpsk,
    mutual_info_qpsk,
)
from .thresholds import (
    ThresholdQuery,
    UniqueRegimeError,
    bp_threshold,
    diffusion_coefficient,
    io_threshold_coupled,
    io_threshold_uncoupled,
    potential,
    potential_threshold,
)

__version__ = "0.1.0"
