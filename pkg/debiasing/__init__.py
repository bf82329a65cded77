"""Debiasing of locally affine restoration estimators.

Biased estimators (l1 analysis, LASSO, Tikhonov, thresholding, nonlocal
means) come with their model subspaces; the debiased estimate is the least
squares refit of the data over that subspace.
"""

from debiasing.errors import (
    DebiasError,
    InvalidDimensionError,
    KernelOverlapError,
    NonFiniteError,
    OracleFailureError,
    ParameterError,
    SingularRestrictionError,
)

__all__ = [
    "DebiasError",
    "InvalidDimensionError",
    "KernelOverlapError",
    "NonFiniteError",
    "OracleFailureError",
    "ParameterError",
    "SingularRestrictionError",
]
