"""l1-analysis restoration and its debiasing.

Minimizes  E(u) = 1/2 ||Phi u - f||^2 + lam ||Gamma u||_1  with the
Chambolle-Pock primal-dual iteration, and runs alongside it the debiased
sequence whose dual step zeroes the coordinates detected on the co-support:

    gate      = z^k + sigma Gamma v^k
    z^{k+1}   = clip(gate, -lam, lam)
    z~^{k+1}  = z~^k + sigma Gamma v~^k,  set to 0 where |gate| > lam + beta
    u^{k+1}   = (Id + tau Phi^T Phi)^{-1} (u^k + tau (Phi^T f - Gamma^T z^{k+1}))
    u~^{k+1}  = (Id + tau Phi^T Phi)^{-1} (u~^k + tau (Phi^T f - Gamma^T z~^{k+1}))
    v, v~     = extrapolation with theta

At convergence u~ is the least-squares fit of f over Ker[Gamma_{I^c}].
Tiny instances can be checked against an exhaustive co-support search.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.optimize import linprog
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import cg

from debiasing.errors import InvalidDimensionError, OracleFailureError, ParameterError
from debiasing.linops import DENSE_LIMIT, LinearMap, op_norm
from debiasing.subspace import PINV_RCOND, SubspaceBasis, restricted_pinv

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITERS = 100_000
STEP_SAFETY = 0.99
# smallest positive normalized float
BETA_DEFAULT = float(np.finfo(float).tiny)
SUPPORT_RTOL = 1e-8
CG_RTOL = 1e-12
BRUTEFORCE_MAX_L = 12
CERTIFICATE_TOL = 1e-7


@dataclass(frozen=True)
class PdParams:
    sigma: float
    tau: float
    theta: float = 1.0
    beta: float = BETA_DEFAULT
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if not (self.sigma > 0 and self.tau > 0):
            raise ParameterError(f"sigma and tau must be positive, got {self.sigma}, {self.tau}")
        if not 0.0 <= self.theta <= 1.0:
            raise ParameterError(f"theta must lie in [0, 1], got {self.theta}")
        if not self.beta > 0:
            raise ParameterError(f"beta must be positive, got {self.beta}")
        if self.max_iters < 1 or not self.tol > 0:
            raise ParameterError(f"need max_iters >= 1 and tol > 0, got {self.max_iters}, {self.tol}")

    @classmethod
    def for_operator(cls, Gamma: LinearMap, **overrides) -> PdParams:
        """sigma = tau = 0.99 / ||Gamma||, so sigma tau ||Gamma||^2 = 0.98."""
        norm = gamma_norm(Gamma)
        if norm == 0.0:
            raise ParameterError(f"{Gamma.name} is the zero operator")
        step = STEP_SAFETY / norm
        return cls(sigma=overrides.pop("sigma", step), tau=overrides.pop("tau", step), **overrides)

    def check_steps(self, norm: float) -> None:
        if self.sigma * self.tau * norm**2 >= 1.0:
            raise ParameterError(
                f"step rule violated: sigma*tau = {self.sigma * self.tau:.6g} "
                f">= 1/||Gamma||^2 = {1.0 / norm**2:.6g}"
            )


@dataclass
class PdState:
    """Biased iterates (u, v, z) and their debiased shadows."""

    u: np.ndarray
    v: np.ndarray
    z: np.ndarray
    tilde_u: np.ndarray
    tilde_v: np.ndarray
    tilde_z: np.ndarray
    iter: int = 0

    @classmethod
    def zeros(cls, n: int, l: int) -> PdState:
        return cls(np.zeros(n), np.zeros(n), np.zeros(l), np.zeros(n), np.zeros(n), np.zeros(l))


@dataclass(frozen=True)
class SupportInfo:
    """Co-support I of Gamma u*, the signs on I, and alpha = min_I |Gamma u*|.

    alpha is +inf when I is empty.
    """

    cosupport: np.ndarray
    signs: np.ndarray
    alpha: float

    @classmethod
    def from_gamma_u(cls, gamma_u: np.ndarray, tol: float | None = None) -> SupportInfo:
        if tol is None:
            tol = support_tol(gamma_u)
        idx = np.flatnonzero(np.abs(gamma_u) > tol)
        alpha = float(np.min(np.abs(gamma_u[idx]))) if idx.size else math.inf
        return cls(idx, np.sign(gamma_u[idx]), alpha)

    def __len__(self) -> int:
        return int(self.cosupport.size)


@dataclass(frozen=True)
class TraceRow:
    iter: int
    energy: float
    active_size: int
    change: float
    tilde_change: float = math.nan


@dataclass
class PdResult:
    u: np.ndarray
    z: np.ndarray
    iters: int
    converged: bool
    trace: list[TraceRow] = field(default_factory=list)


@dataclass
class DebiasedPdResult:
    u: np.ndarray
    tilde_u: np.ndarray
    support: SupportInfo
    iters: int
    converged: bool
    # first iteration from which the detected active set never changed again
    support_stable_since: int
    trace: list[TraceRow] = field(default_factory=list)


def support_tol(gamma_u: np.ndarray) -> float:
    peak = float(np.max(np.abs(gamma_u))) if gamma_u.size else 0.0
    return SUPPORT_RTOL * max(1.0, peak)


def gamma_norm(Gamma: LinearMap) -> float:
    return Gamma.norm_bound if Gamma.norm_bound else op_norm(Gamma)


def energy(Phi: LinearMap, Gamma: LinearMap, lam: float, f: np.ndarray, u: np.ndarray) -> float:
    r = Phi.forward(u) - f
    return float(0.5 * r @ r + lam * np.sum(np.abs(Gamma.forward(u))))


class DataResolvent:
    """Solver for (Id + tau Phi^T Phi) x = r, factorized once."""

    def __init__(self, Phi: LinearMap, tau: float):
        if not tau > 0:
            raise ParameterError(f"tau must be positive, got {tau}")
        self.n = Phi.domain_dim
        self._chol = None
        self._op = None
        if max(Phi.domain_dim, Phi.codomain_dim) <= DENSE_LIMIT:
            P = Phi.as_matrix()
            H = np.eye(self.n) + tau * (P.T @ P)
            self._chol = scipy.linalg.cho_factor(H)
        else:
            shifted = lambda x: x + tau * Phi.adjoint(Phi.forward(x))
            self._op = LinearMap(self.n, self.n, shifted, shifted, name="data resolvent").aslinearoperator()

    def __call__(self, r: np.ndarray) -> np.ndarray:
        if self._chol is not None:
            return scipy.linalg.cho_solve(self._chol, r)
        x, info = cg(self._op, r, x0=r, rtol=CG_RTOL, maxiter=10 * self.n)
        if info != 0:
            log.warning("resolvent: conjugate gradient stopped early (info=%d)", info)
        return x


def resolvent_data(Phi: LinearMap, tau: float) -> DataResolvent:
    return DataResolvent(Phi, tau)


def _prepare(Phi: LinearMap, Gamma: LinearMap, lam: float, f: np.ndarray, params: PdParams | None):
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    if Gamma.domain_dim != Phi.domain_dim:
        raise InvalidDimensionError(
            f"Gamma acts on R^{Gamma.domain_dim} but Phi acts on R^{Phi.domain_dim}"
        )
    f = np.asarray(f, dtype=float)
    if f.shape != (Phi.codomain_dim,):
        raise InvalidDimensionError(f"f must have length {Phi.codomain_dim}, got shape {f.shape}")
    if params is None:
        params = PdParams.for_operator(Gamma)
    params.check_steps(gamma_norm(Gamma))
    return f, params, resolvent_data(Phi, params.tau)


def _relative_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.linalg.norm(new - old) / max(1.0, np.linalg.norm(old)))


def _wants_trace(k: int, every: int) -> bool:
    return every > 0 and k % every == 0


def solve_pd(
    Phi: LinearMap,
    Gamma: LinearMap,
    lam: float,
    f: np.ndarray,
    params: PdParams | None = None,
    trace_every: int = 0,
) -> PdResult:
    """Primal-dual minimization of the l1-analysis energy."""
    f, p, solve = _prepare(Phi, Gamma, lam, f, params)
    state = PdState.zeros(Phi.domain_dim, Gamma.codomain_dim)
    phit_f = Phi.adjoint(f)
    trace: list[TraceRow] = []
    converged = False

    for k in range(1, p.max_iters + 1):
        gate = state.z + p.sigma * Gamma.forward(state.v)
        state.z = np.clip(gate, -lam, lam)
        u_new = solve(state.u + p.tau * (phit_f - Gamma.adjoint(state.z)))
        state.v = u_new + p.theta * (u_new - state.u)
        change = _relative_change(u_new, state.u)
        state.u = u_new
        state.iter = k

        if _wants_trace(k, trace_every):
            active = int(np.count_nonzero(np.abs(gate) > lam + p.beta))
            trace.append(TraceRow(k, energy(Phi, Gamma, lam, f, state.u), active, change))
        if change < p.tol:
            converged = True
            break

    if not converged:
        log.warning("solve_pd: no convergence after %d iterations (last change %.3g)", p.max_iters, change)
    return PdResult(state.u, state.z, state.iter, converged, trace)


def solve_pd_debiased(
    Phi: LinearMap,
    Gamma: LinearMap,
    lam: float,
    f: np.ndarray,
    params: PdParams | None = None,
    trace_every: int = 0,
) -> DebiasedPdResult:
    """Run the biased primal-dual iteration and the debiased one in lockstep."""
    f, p, solve = _prepare(Phi, Gamma, lam, f, params)
    state = PdState.zeros(Phi.domain_dim, Gamma.codomain_dim)
    phit_f = Phi.adjoint(f)
    trace: list[TraceRow] = []
    converged = False
    active = np.zeros(Gamma.codomain_dim, dtype=bool)
    gate = np.zeros(Gamma.codomain_dim)
    stable_since = 1

    for k in range(1, p.max_iters + 1):
        gate = state.z + p.sigma * Gamma.forward(state.v)
        new_active = np.abs(gate) > lam + p.beta
        if not np.array_equal(new_active, active):
            stable_since = k
        active = new_active

        state.z = np.clip(gate, -lam, lam)
        tilde_z = state.tilde_z + p.sigma * Gamma.forward(state.tilde_v)
        tilde_z[active] = 0.0
        state.tilde_z = tilde_z

        u_new = solve(state.u + p.tau * (phit_f - Gamma.adjoint(state.z)))
        tu_new = solve(state.tilde_u + p.tau * (phit_f - Gamma.adjoint(state.tilde_z)))
        state.v = u_new + p.theta * (u_new - state.u)
        state.tilde_v = tu_new + p.theta * (tu_new - state.tilde_u)
        change = _relative_change(u_new, state.u)
        tilde_change = _relative_change(tu_new, state.tilde_u)
        state.u, state.tilde_u = u_new, tu_new
        state.iter = k

        if _wants_trace(k, trace_every):
            trace.append(TraceRow(
                k, energy(Phi, Gamma, lam, f, state.u), int(active.sum()), change, tilde_change
            ))
        if change < p.tol and tilde_change < p.tol:
            converged = True
            break

    if not converged:
        log.warning(
            "solve_pd_debiased: no convergence after %d iterations, active set of size %d last changed at %d",
            p.max_iters, int(active.sum()), stable_since,
        )

    cosupport = np.flatnonzero(active)
    gamma_u = np.abs(Gamma.forward(state.u))[cosupport]
    alpha = float(gamma_u.min()) if cosupport.size else math.inf
    if alpha * p.sigma <= p.beta:
        log.warning("solve_pd_debiased: alpha*sigma = %.3g <= beta = %.3g", alpha * p.sigma, p.beta)
    support = SupportInfo(cosupport, np.sign(gate[cosupport]), alpha)
    return DebiasedPdResult(state.u, state.tilde_u, support, state.iter, converged, stable_since, trace)


def detect_support(
    z: np.ndarray, v: np.ndarray, Gamma: LinearMap, sigma: float, lam: float, beta: float = BETA_DEFAULT
) -> np.ndarray:
    """Indices where |z + sigma Gamma v| > lam + beta."""
    z = np.asarray(z, dtype=float)
    if z.shape != (Gamma.codomain_dim,):
        raise InvalidDimensionError(f"z must have length {Gamma.codomain_dim}, got shape {z.shape}")
    return np.flatnonzero(np.abs(z + sigma * Gamma.apply(v)) > lam + beta)


def cosupport_basis(Gamma: LinearMap, cosupport) -> SubspaceBasis:
    """Orthonormal basis of Ker[Gamma_{I^c}]."""
    n = Gamma.domain_dim
    off = np.ones(Gamma.codomain_dim, dtype=bool)
    off[np.asarray(cosupport, dtype=int)] = False

    if Gamma.edges is not None:
        # difference operator: the kernel is spanned by the indicators of the
        # connected components of the graph whose edges are the I^c rows
        e = Gamma.edges[off]
        adjacency = scipy.sparse.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
        ncomp, labels = connected_components(adjacency, directed=False)
        U = np.zeros((n, ncomp))
        U[np.arange(n), labels] = 1.0
        U /= np.sqrt(U.sum(axis=0))
        return SubspaceBasis.linear(U, orthonormal=True)

    if not off.any():
        return SubspaceBasis.linear(np.eye(n), orthonormal=True)
    rows = Gamma.as_matrix()[off]
    return SubspaceBasis.linear(scipy.linalg.null_space(rows, rcond=PINV_RCOND), orthonormal=True)


def _restricted_terms(Phi: LinearMap, Gamma: LinearMap, S: SupportInfo):
    U = cosupport_basis(Gamma, S.cosupport).columns
    pinv = restricted_pinv(Phi.matmat(U))
    return U, pinv


def explicit_solution(Phi: LinearMap, Gamma: LinearMap, lam: float, f: np.ndarray, S: SupportInfo) -> np.ndarray:
    """u* = U (Phi U)^+ f - lam U (U^T Phi^T Phi U)^{-1} U^T (Gamma^T)_I s_I."""
    U, pinv = _restricted_terms(Phi, Gamma, S)
    w = np.zeros(Gamma.codomain_dim)
    w[S.cosupport] = S.signs
    # (U^T Phi^T Phi U)^+ = (Phi U)^+ (Phi U)^{+T}
    shift = pinv @ (pinv.T @ (U.T @ Gamma.adjoint(w)))
    return U @ (pinv @ np.asarray(f, dtype=float) - lam * shift)


def explicit_debias(Phi: LinearMap, Gamma: LinearMap, f: np.ndarray, S: SupportInfo) -> np.ndarray:
    """u~* = U (Phi U)^+ f."""
    U, pinv = _restricted_terms(Phi, Gamma, S)
    return U @ (pinv @ np.asarray(f, dtype=float))


def l1_jvp(Phi: LinearMap, Gamma: LinearMap, S: SupportInfo) -> Callable[[np.ndarray], np.ndarray]:
    """Jacobian of the l1-analysis estimator at fixed co-support: delta -> U (Phi U)^+ delta."""
    U, pinv = _restricted_terms(Phi, Gamma, S)
    return lambda delta: U @ (pinv @ delta)


def _dual_certificate(G: np.ndarray, grad: np.ndarray, lam: float, on: np.ndarray, signs) -> bool:
    """Is there v with v_I = s_I, |v_{I^c}| <= 1 and Phi^T(Phi u - f) + lam G^T v = 0?"""
    off = np.setdiff1d(np.arange(G.shape[0]), on)
    r = -grad / lam - G[on].T @ np.asarray(signs, dtype=float)
    scale = max(1.0, float(np.max(np.abs(r))))
    if off.size == 0:
        return bool(np.max(np.abs(r)) <= CERTIFICATE_TOL * scale)

    A = G[off].T
    v_ls, *_ = np.linalg.lstsq(A, r, rcond=None)
    if np.max(np.abs(A @ v_ls - r)) > CERTIFICATE_TOL * scale:
        return False
    if np.max(np.abs(v_ls)) <= 1.0 + CERTIFICATE_TOL:
        return True
    kernel = scipy.linalg.null_space(A)
    if kernel.shape[1] == 0:
        return False
    # min t  s.t.  -t <= v_ls + K c <= t
    m, q = kernel.shape
    c = np.zeros(q + 1)
    c[-1] = 1.0
    ones = np.ones((m, 1))
    A_ub = np.vstack([np.hstack([kernel, -ones]), np.hstack([-kernel, -ones])])
    b_ub = np.concatenate([-v_ls, v_ls])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * (q + 1), method="highs")
    return bool(res.status == 0 and res.x[-1] <= 1.0 + CERTIFICATE_TOL)


def cosupport_bruteforce(
    Phi: LinearMap, Gamma: LinearMap, lam: float, f: np.ndarray
) -> tuple[SupportInfo, np.ndarray]:
    """Exhaustive co-support search verified by the optimality conditions."""
    L = Gamma.codomain_dim
    if L > BRUTEFORCE_MAX_L:
        raise ParameterError(f"brute force needs L <= {BRUTEFORCE_MAX_L}, got {L}")
    f = np.asarray(f, dtype=float)
    G = Gamma.as_matrix()
    P = Phi.as_matrix()
    n = Phi.domain_dim

    for size in range(L + 1):
        for on in itertools.combinations(range(L), size):
            on = np.array(on, dtype=int)
            off = np.setdiff1d(np.arange(L), on)
            U = scipy.linalg.null_space(G[off], rcond=PINV_RCOND) if off.size else np.eye(n)
            PU = P @ U
            if U.shape[1] == 0:
                if size:
                    continue
                pinv = np.zeros((0, P.shape[0]))
            else:
                s = np.linalg.svd(PU, compute_uv=False)
                if s.size < U.shape[1] or s[-1] <= PINV_RCOND * s[0]:
                    continue
                pinv = np.linalg.pinv(PU, rcond=PINV_RCOND)
            base = U @ (pinv @ f)
            gram_inv = pinv @ pinv.T

            for signs in itertools.product((-1.0, 1.0), repeat=size):
                w = np.zeros(L)
                w[on] = signs
                u = base - lam * U @ (gram_inv @ (U.T @ (G.T @ w)))
                gu = G @ u
                tol = support_tol(gu)
                if size and (np.any(np.abs(gu[on]) <= tol) or np.any(np.sign(gu[on]) != signs)):
                    continue
                if _dual_certificate(G, P.T @ (P @ u - f), lam, on, signs):
                    return SupportInfo.from_gamma_u(gu, tol), u

    raise OracleFailureError("no co-support candidate satisfies the optimality conditions")
