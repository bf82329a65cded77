"""Exception hierarchy shared by the library and the CLI.

The CLI turns any DebiasError into a single line on stderr:

    error: <ExceptionClass>: <message>
"""

import numpy as np


class DebiasError(Exception):
    """Base class for every failure raised by this package."""


class InvalidDimensionError(DebiasError, ValueError):
    pass


class ParameterError(DebiasError, ValueError):
    pass


class SingularRestrictionError(DebiasError, np.linalg.LinAlgError):
    """Phi is not invertible on the model subspace (Phi U lacks full column rank)."""


class KernelOverlapError(SingularRestrictionError):
    """Ker Phi and Ker Gamma share a nonzero vector."""


class OracleFailureError(DebiasError, RuntimeError):
    pass


class NonFiniteError(DebiasError, FloatingPointError):
    pass
