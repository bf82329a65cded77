"""Estimators with closed-form solutions and known model subspaces.

Each estimator returns the estimate together with its model subspace
(the tangent affine subspace at f), and the weak bias when it is known.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import cg

from debiasing.errors import KernelOverlapError, ParameterError
from debiasing.linops import DENSE_LIMIT, LinearMap
from debiasing.subspace import PINV_RCOND, SubspaceBasis, debias_cls, orthonormalize

log = logging.getLogger(__name__)

KERNEL_EIG_TOL = 1e-12
CG_RTOL = 1e-12


@dataclass(frozen=True)
class EstimateWithModel:
    """An estimate u* and its model subspace M*.

    ``model`` is None when the subspace would not fit in memory
    (above the dense limit).
    """

    estimate: np.ndarray
    model: SubspaceBasis | None
    weak_bias: np.ndarray | None = None

    def debiased(self, Phi: LinearMap, f: np.ndarray) -> np.ndarray:
        if self.model is None:
            raise ParameterError("no model subspace available to debias against")
        return debias_cls(self.estimate, self.model, Phi, f)


def _row_space(Phi: LinearMap) -> SubspaceBasis:
    return orthonormalize(SubspaceBasis.linear(Phi.as_matrix().T))


def least_squares(Phi: LinearMap, f: np.ndarray) -> EstimateWithModel:
    """u = Phi^+ f, model Im[Phi^T]; methodically unbiased."""
    M = Phi.as_matrix()
    u = np.linalg.pinv(M, rcond=PINV_RCOND) @ np.asarray(f, dtype=float)
    return EstimateWithModel(u, _row_space(Phi), np.zeros(Phi.domain_dim))


def tikhonov(Phi: LinearMap, Gamma: LinearMap, lam: float, f: np.ndarray) -> EstimateWithModel:
    """Solve (Phi^T Phi + lam Gamma^T Gamma) u = Phi^T f; model Im[Phi^T]."""
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    rhs = Phi.apply_adjoint(np.asarray(f, dtype=float))
    n = Phi.domain_dim

    if n <= DENSE_LIMIT:
        P = Phi.as_matrix()
        G = Gamma.as_matrix()
        H = P.T @ P + lam * (G.T @ G)
        if np.linalg.eigvalsh(H)[0] <= KERNEL_EIG_TOL:
            raise KernelOverlapError("Ker Phi and Ker Gamma intersect: Tikhonov system is singular")
        u = scipy.linalg.cho_solve(scipy.linalg.cho_factor(H), rhs)
        return EstimateWithModel(u, _row_space(Phi))

    log.debug("tikhonov: %d unknowns above dense limit, using conjugate gradient", n)
    normal = lambda x: Phi.adjoint(Phi.forward(x)) + lam * Gamma.adjoint(Gamma.forward(x))
    H = LinearMap(n, n, normal, normal, name="tikhonov normal operator")
    u, info = cg(H.aslinearoperator(), rhs, rtol=CG_RTOL, maxiter=10 * n)
    if info != 0:
        raise KernelOverlapError(f"conjugate gradient did not converge (info={info}); system may be singular")
    return EstimateWithModel(u, None)


def _support(f: np.ndarray, lam: float) -> np.ndarray:
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    return np.flatnonzero(np.abs(f) > lam)


def hard_threshold(f: np.ndarray, lam: float) -> EstimateWithModel:
    f = np.asarray(f, dtype=float)
    support = _support(f, lam)
    u = np.zeros_like(f)
    u[support] = f[support]
    return EstimateWithModel(u, SubspaceBasis.coordinates(f.size, support), np.zeros_like(f))


def soft_threshold(f: np.ndarray, lam: float) -> EstimateWithModel:
    f = np.asarray(f, dtype=float)
    support = _support(f, lam)
    u = np.zeros_like(f)
    u[support] = f[support] - lam * np.sign(f[support])
    weak_bias = np.zeros_like(f)
    weak_bias[support] = -lam * np.sign(f[support])
    return EstimateWithModel(u, SubspaceBasis.coordinates(f.size, support), weak_bias)
