"""Probabilistic shaping for nonlinear fiber: PMF optimizers, EGN model, SSFM channel, metrics."""

from .constellation import (
    Constellation,
    Pmf,
    entropy,
    make_square_qam,
    mb_pmf,
    normalized_moments,
    read_pmf,
    uniform_pmf,
    write_pmf,
)
from .egn import EgnCoefficients, LinkConfig, calibrate_chi, egn_snr, optimal_power
from .metrics import air_mismatched, awgn_mi, effective_snr, per_point_stats, shaping_gap
from .optimize import OptimizerReport, egn_2d, egn_mb, lin_mb, ssfm_ba
from .ssfm import SignalConfig, propagate, rx_detect, tx_generate

__version__ = "0.1.0"

__all__ = [
    "Constellation",
    "Pmf",
    "entropy",
    "make_square_qam",
    "mb_pmf",
    "normalized_moments",
    "read_pmf",
    "uniform_pmf",
    "write_pmf",
    "EgnCoefficients",
    "LinkConfig",
    "calibrate_chi",
    "egn_snr",
    "optimal_power",
    "air_mismatched",
    "awgn_mi",
    "effective_snr",
    "per_point_stats",
    "shaping_gap",
    "OptimizerReport",
    "egn_2d",
    "egn_mb",
    "lin_mb",
    "ssfm_ba",
    "SignalConfig",
    "propagate",
    "rx_detect",
    "tx_generate",
]
