"""Estimators and statistics for simulated detection data."""

from .correlations import G2Result, g2_cross, g2_from_counts, g2_map
from .estimators import (
    ModeQuartet,
    correlation_from_counts,
    hom_probability_estimate,
    joint_probability_estimates,
    reference_sets,
)
from .hom import HomScanResult, hom_scan
from .stats import EstimateWithError, GaussianFit, bootstrap, gaussian_fit

__all__ = [
    "EstimateWithError",
    "G2Result",
    "GaussianFit",
    "HomScanResult",
    "ModeQuartet",
    "bootstrap",
    "correlation_from_counts",
    "g2_cross",
    "g2_from_counts",
    "g2_map",
    "gaussian_fit",
    "hom_probability_estimate",
    "hom_scan",
    "joint_probability_estimates",
    "reference_sets",
]
