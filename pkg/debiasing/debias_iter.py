"""Debiasing of any locally affine estimator from Jacobian-vector products.

Only delta -> J* delta is needed.  Each iteration perturbs the current
residual with a random unit direction, maps it through J*, keeps the part
orthogonal to the basis found so far, and refits

    u~ = u* + U (Phi U)^+ (f - Phi u*)

over the enlarged subspace.  Directions guided by the residual recover the
part of the model subspace that matters for the data fit first, so a few
iterations are usually enough.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from debiasing.errors import InvalidDimensionError, NonFiniteError, ParameterError
from debiasing.linops import LinearMap
from debiasing.subspace import PINV_RCOND, SubspaceBasis

log = logging.getLogger(__name__)

DROP_TOL = 1e-8
DEFAULT_MAX_DIRS = 50
DEFAULT_STOP_TOL = 1e-6
EPSILON_SCALE = 0.01


@dataclass(frozen=True)
class DebiasConfig:
    """``epsilon=None`` means 0.01 ||f|| / sqrt(P)."""

    epsilon: float | None = None
    max_dirs: int = DEFAULT_MAX_DIRS
    stop_tol: float = DEFAULT_STOP_TOL
    seed: int = 0
    drop_tol: float = DROP_TOL

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_dirs < 1:
            raise ParameterError(f"max_dirs must be >= 1, got {self.max_dirs}")
        if self.stop_tol < 0 or self.drop_tol < 0:
            raise ParameterError("stop_tol and drop_tol must be nonnegative")

    def resolve_epsilon(self, f: np.ndarray) -> float:
        if self.epsilon is not None:
            return self.epsilon
        eps = EPSILON_SCALE * float(np.linalg.norm(f)) / math.sqrt(f.size)
        return eps if eps > 0 else EPSILON_SCALE


@dataclass(frozen=True)
class DebiasStep:
    iter: int
    direction_norm: float
    kept: bool
    residual_norm: float
    change: float


@dataclass
class DebiasRun:
    basis: SubspaceBasis
    tilde_u: np.ndarray
    history: list[DebiasStep] = field(default_factory=list)
    converged: bool = False


def gs_append(U: SubspaceBasis, u_prime: np.ndarray, drop_tol: float = DROP_TOL) -> SubspaceBasis:
    """Append the normalized component of u' orthogonal to U, if it is not negligible."""
    u_prime = np.asarray(u_prime, dtype=float)
    if u_prime.shape != (U.ambient_dim,):
        raise InvalidDimensionError(f"expected length {U.ambient_dim}, got shape {u_prime.shape}")
    Q = U.columns
    e = u_prime - Q @ (Q.T @ u_prime)
    # second pass restores orthogonality lost to cancellation
    e = e - Q @ (Q.T @ e)
    norm = float(np.linalg.norm(e))
    if norm <= drop_tol * max(1.0, float(np.linalg.norm(u_prime))):
        return U
    return SubspaceBasis(np.column_stack([Q, e / norm]), U.offset, orthonormal=True)


def refit(u_star: np.ndarray, U: SubspaceBasis, Phi: LinearMap, f: np.ndarray) -> np.ndarray:
    """u* + U (Phi U)^+ (f - Phi u*), with the SVD cutoff absorbing rank loss."""
    if U.dim == 0:
        return u_star.copy()
    PhiU = Phi.matmat(U.columns)
    s = np.linalg.svd(PhiU, compute_uv=False)
    if s.size < U.dim or s[-1] <= PINV_RCOND * s[0]:
        log.warning("refit: Phi U is rank-deficient (%d columns), pseudo-inverse cutoff applied", U.dim)
    coef = np.linalg.pinv(PhiU, rcond=PINV_RCOND) @ (f - Phi.apply(u_star))
    return u_star + U.columns @ coef


def debias_general(
    f: np.ndarray,
    u_star: np.ndarray,
    jvp: Callable[[np.ndarray], np.ndarray],
    Phi: LinearMap,
    cfg: DebiasConfig | None = None,
) -> DebiasRun:
    cfg = cfg or DebiasConfig()
    f = np.asarray(f, dtype=float)
    u_star = np.asarray(u_star, dtype=float)
    if f.shape != (Phi.codomain_dim,) or u_star.shape != (Phi.domain_dim,):
        raise InvalidDimensionError(
            f"f and u* must have lengths {Phi.codomain_dim} and {Phi.domain_dim}, "
            f"got {f.shape} and {u_star.shape}"
        )
    rng = np.random.default_rng(cfg.seed)
    eps = cfg.resolve_epsilon(f)
    U = SubspaceBasis.empty(Phi.domain_dim)
    tilde_u = u_star.copy()
    history: list[DebiasStep] = []

    for k in range(1, cfg.max_dirs + 1):
        eta = rng.standard_normal(Phi.codomain_dim)
        delta = eta / np.linalg.norm(eta)
        u_prime = np.asarray(jvp(f - Phi.apply(tilde_u) + eps * delta), dtype=float)
        if not np.all(np.isfinite(u_prime)):
            raise NonFiniteError(f"Jacobian-vector product returned non-finite values at iteration {k}")

        grown = gs_append(U, u_prime, cfg.drop_tol)
        kept = grown.dim > U.dim
        if not kept:
            log.debug("debias_general: direction %d already spanned, dropped", k)
        U = grown
        new_u = refit(u_star, U, Phi, f) if kept else tilde_u
        change = float(np.linalg.norm(new_u - tilde_u) / max(1.0, np.linalg.norm(tilde_u)))
        tilde_u = new_u
        residual = float(np.linalg.norm(f - Phi.apply(tilde_u)))
        direction_norm = float(np.linalg.norm(u_prime))
        history.append(DebiasStep(k, direction_norm, kept, residual, change))

        exhausted = U.dim >= min(Phi.domain_dim, Phi.codomain_dim)
        if change < cfg.stop_tol or exhausted:
            break

    converged = history[-1].change < cfg.stop_tol or exhausted
    return DebiasRun(U, tilde_u, history, converged)
