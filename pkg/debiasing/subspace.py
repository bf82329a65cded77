"""Model-subspace algebra.

A model subspace is the affine set offset + Im[columns].  This module
orthonormalizes bases, projects onto them, splits an error into its
method and model parts, and computes the constrained least-squares
debiasing  u~ = u* + U (Phi U)^+ (f - Phi u*).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from debiasing.errors import InvalidDimensionError, SingularRestrictionError
from debiasing.linops import LinearMap

PINV_RCOND = 1e-10
ORTHO_ATOL = 1e-10


@dataclass(frozen=True)
class SubspaceBasis:
    """Columns (N x n) spanning the linear part, plus an affine offset."""

    columns: np.ndarray
    offset: np.ndarray
    orthonormal: bool = False

    def __post_init__(self):
        columns = np.array(self.columns, dtype=float, ndmin=2)
        offset = np.asarray(self.offset, dtype=float).ravel()
        if columns.shape[0] != offset.size:
            raise InvalidDimensionError(
                f"basis has {columns.shape[0]} rows but offset has length {offset.size}"
            )
        if self.orthonormal and columns.shape[1]:
            gram = columns.T @ columns
            if not np.allclose(gram, np.eye(columns.shape[1]), atol=ORTHO_ATOL):
                raise InvalidDimensionError("columns flagged orthonormal but U^T U != Id")
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "offset", offset)

    @classmethod
    def linear(cls, columns, orthonormal: bool = False) -> SubspaceBasis:
        columns = np.array(columns, dtype=float, ndmin=2)
        return cls(columns, np.zeros(columns.shape[0]), orthonormal)

    @classmethod
    def empty(cls, n: int, offset=None) -> SubspaceBasis:
        offset = np.zeros(n) if offset is None else offset
        return cls(np.zeros((n, 0)), offset, orthonormal=True)

    @classmethod
    def coordinates(cls, n: int, support) -> SubspaceBasis:
        """Im[Id_I]: the coordinate subspace of the index set I."""
        return cls.linear(np.eye(n)[:, np.asarray(support, dtype=int)], orthonormal=True)

    @property
    def ambient_dim(self) -> int:
        return self.columns.shape[0]

    @property
    def dim(self) -> int:
        return self.columns.shape[1]

    def has_full_rank(self, rcond: float = PINV_RCOND) -> bool:
        if self.dim == 0:
            return True
        s = np.linalg.svd(self.columns, compute_uv=False)
        return bool(s[-1] > rcond * s[0])


def orthonormalize(B: SubspaceBasis, rcond: float = PINV_RCOND) -> SubspaceBasis:
    """Orthonormal basis of the same span; near-null directions are dropped."""
    if B.orthonormal:
        return B
    A = B.columns
    if A.shape[1] == 0 or not np.any(A):
        return SubspaceBasis.empty(B.ambient_dim, B.offset)
    s = np.linalg.svd(A, compute_uv=False)
    rank = int(np.sum(s > rcond * s[0]))
    if rank == A.shape[1]:
        # Gram-Schmidt order, signs fixed so that diag(R) > 0
        Q, R = np.linalg.qr(A)
        Q = Q * np.sign(np.diag(R))
    else:
        Q = scipy.linalg.orth(A, rcond=rcond)
    return SubspaceBasis(Q, B.offset, orthonormal=True)


def _check_length(name: str, u: np.ndarray, n: int) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (n,):
        raise InvalidDimensionError(f"{name}: expected length {n}, got shape {u.shape}")
    return u


def project(u: np.ndarray, M: SubspaceBasis) -> np.ndarray:
    """Orthogonal projection onto the affine subspace M."""
    u = _check_length("project", u, M.ambient_dim)
    Q = orthonormalize(M).columns
    r = u - M.offset
    return M.offset + Q @ (Q.T @ r)


@dataclass(frozen=True)
class BiasReport:
    method_bias: np.ndarray
    model_bias: np.ndarray
    total_bias: np.ndarray

    @property
    def norms(self) -> tuple[float, float, float]:
        return (
            float(np.linalg.norm(self.method_bias)),
            float(np.linalg.norm(self.model_bias)),
            float(np.linalg.norm(self.total_bias)),
        )


def bias_decompose(u_f0: np.ndarray, u0: np.ndarray, M: SubspaceBasis) -> BiasReport:
    """Split u_f0 - u0 into method bias minus model bias.

    The model bias is u0 - Pi_M(u0), which is orthogonal to the linear part of
    M; for a linear M this is the projection of u0 on the orthogonal complement.
    """
    u_f0 = _check_length("bias_decompose", u_f0, M.ambient_dim)
    u0 = _check_length("bias_decompose", u0, M.ambient_dim)
    proj = project(u0, M)
    return BiasReport(
        method_bias=u_f0 - proj,
        model_bias=u0 - proj,
        total_bias=u_f0 - u0,
    )


def restricted_pinv(PhiU: np.ndarray, rcond: float = PINV_RCOND, check: bool = True) -> np.ndarray:
    """(Phi U)^+ by SVD; raises when Phi U lacks full column rank and ``check`` is set."""
    if PhiU.shape[1] == 0:
        return np.zeros((0, PhiU.shape[0]))
    if check:
        s = np.linalg.svd(PhiU, compute_uv=False)
        if s.size < PhiU.shape[1] or s[0] == 0 or s[-1] <= rcond * s[0]:
            raise SingularRestrictionError(
                "Phi U is rank-deficient: Phi is not invertible on the model subspace"
            )
    return np.linalg.pinv(PhiU, rcond=rcond)


def debias_cls(u_star: np.ndarray, U: SubspaceBasis, Phi: LinearMap, f: np.ndarray) -> np.ndarray:
    """Constrained least squares over u* + Im[U]."""
    u_star = _check_length("debias_cls", u_star, Phi.domain_dim)
    f = _check_length("debias_cls", f, Phi.codomain_dim)
    if U.ambient_dim != Phi.domain_dim:
        raise InvalidDimensionError(
            f"basis lives in R^{U.ambient_dim} but Phi acts on R^{Phi.domain_dim}"
        )
    if U.dim == 0:
        return u_star.copy()
    PhiU = Phi.matmat(U.columns)
    coef = restricted_pinv(PhiU) @ (f - Phi.apply(u_star))
    return u_star + U.columns @ coef


def cls(Phi: LinearMap, f: np.ndarray, b: np.ndarray, A: np.ndarray) -> tuple[np.ndarray, SubspaceBasis]:
    """Minimum-norm least squares constrained to b + Im[A] and its model subspace."""
    f = _check_length("cls", f, Phi.codomain_dim)
    b = _check_length("cls", b, Phi.domain_dim)
    A = np.array(A, dtype=float, ndmin=2)
    if A.shape[0] != Phi.domain_dim:
        raise InvalidDimensionError(f"cls: A has {A.shape[0]} rows, expected {Phi.domain_dim}")
    PhiA = Phi.matmat(A)
    u = b + A @ (np.linalg.pinv(PhiA, rcond=PINV_RCOND) @ (f - Phi.apply(b)))
    model = orthonormalize(SubspaceBasis(A @ PhiA.T, b))
    return u, model
