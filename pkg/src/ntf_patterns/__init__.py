"""Multi-timescale behavioral pattern mining with non-negative PARAFAC."""

__version__ = "0.1.0"

from .tensor import FactorModel, fold, frobenius_norm, khatri_rao, reconstruct, relative_error, unfold
from .parafac import FitConfig, FitResult, align, fit, fit_multi, normalize
from .corcondia import cc_scan, compute_core, core_consistency

__all__ = [
    "FactorModel",
    "fold",
    "frobenius_norm",
    "khatri_rao",
    "reconstruct",
    "relative_error",
    "unfold",
    "FitConfig",
    "FitResult",
    "align",
    "fit",
    "fit_multi",
    "normalize",
    "cc_scan",
    "compute_core",
    "core_consistency",
]
