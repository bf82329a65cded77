"""Matrix-free linear operators on flat signals.

Every operator acts on flat float64 vectors; the 1D/2D layout travels with
the operator as a Shape.  Boundaries are periodic everywhere so the shipped
operators are circulant and their norms have closed forms.

Usage:
    G = grad_2d(Shape.two_d(64, 64))
    Phi = gauss_conv(Shape.two_d(64, 64), bandwidth=2.0)
    sigma = tau = 0.99 / op_norm(G)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage
from scipy.sparse.linalg import LinearOperator

from debiasing.errors import InvalidDimensionError, ParameterError

# Operators larger than this are never materialized as dense matrices.
DENSE_LIMIT = 4096
GAUSS_TRUNCATE = 4.0
POWER_ITERS = 100


@dataclass(frozen=True)
class Shape:
    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) not in (1, 2) or any(d < 1 for d in dims):
            raise InvalidDimensionError(f"invalid shape {self.dims}")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def one_d(cls, n: int) -> Shape:
        return cls((n,))

    @classmethod
    def two_d(cls, n1: int, n2: int) -> Shape:
        return cls((n1, n2))

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    @property
    def is_2d(self) -> bool:
        return len(self.dims) == 2


@dataclass(frozen=True)
class Signal:
    """A flat real vector together with its layout."""

    values: np.ndarray
    shape: Shape

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size != self.shape.size:
            raise InvalidDimensionError(
                f"signal has {values.size} values but shape {self.shape.dims} needs {self.shape.size}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidDimensionError("signal contains non-finite values")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, arr) -> Signal:
        arr = np.asarray(arr, dtype=float)
        return cls(arr, Shape(arr.shape))

    def image(self) -> np.ndarray:
        return self.values.reshape(self.shape.dims)


@dataclass(frozen=True)
class LinearMap:
    """Forward/adjoint pair A: R^N -> R^P.

    ``edges`` is set for pairwise-difference operators: row l computes
    u[edges[l, 1]] - u[edges[l, 0]].  The model-subspace code uses it to find
    Ker[Gamma_{I^c}] from graph connectivity instead of an SVD.
    """

    domain_dim: int
    codomain_dim: int
    forward: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]
    norm_bound: float | None = None
    name: str = "linear map"
    edges: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.domain_dim < 1 or self.codomain_dim < 1:
            raise InvalidDimensionError(
                f"{self.name}: dimensions must be positive, got {self.codomain_dim}x{self.domain_dim}"
            )

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.domain_dim,):
            raise InvalidDimensionError(
                f"{self.name}: expected input of length {self.domain_dim}, got shape {x.shape}"
            )
        return self.forward(x)

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.codomain_dim,):
            raise InvalidDimensionError(
                f"{self.name}: expected adjoint input of length {self.codomain_dim}, got shape {y.shape}"
            )
        return self.adjoint(y)

    __call__ = apply

    def matmat(self, M: np.ndarray) -> np.ndarray:
        """Apply the operator to every column of M."""
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != self.domain_dim:
            raise InvalidDimensionError(
                f"{self.name}: expected {self.domain_dim} rows, got shape {M.shape}"
            )
        out = np.empty((self.codomain_dim, M.shape[1]))
        for j in range(M.shape[1]):
            out[:, j] = self.forward(M[:, j])
        return out

    def as_matrix(self) -> np.ndarray:
        if max(self.domain_dim, self.codomain_dim) > DENSE_LIMIT:
            raise InvalidDimensionError(
                f"{self.name}: {self.codomain_dim}x{self.domain_dim} exceeds the dense limit {DENSE_LIMIT}"
            )
        return self.matmat(np.eye(self.domain_dim))

    def aslinearoperator(self) -> LinearOperator:
        return LinearOperator(
            (self.codomain_dim, self.domain_dim),
            matvec=lambda x: self.forward(np.ravel(x)),
            rmatvec=lambda y: self.adjoint(np.ravel(y)),
            dtype=float,
        )

    @classmethod
    def from_matrix(cls, M, name: str = "matrix") -> LinearMap:
        M = np.array(M, dtype=float, ndmin=2)
        return cls(
            domain_dim=M.shape[1],
            codomain_dim=M.shape[0],
            forward=lambda x: M @ x,
            adjoint=lambda y: M.T @ y,
            norm_bound=float(np.linalg.norm(M, 2)),
            name=name,
        )


def identity(n: int) -> LinearMap:
    return LinearMap(n, n, np.copy, np.copy, norm_bound=1.0, name=f"identity({n})")


def zeros(p: int, n: int) -> LinearMap:
    return LinearMap(
        n, p, lambda x: np.zeros(p), lambda y: np.zeros(n), norm_bound=0.0, name=f"zeros({p}x{n})"
    )


def grad_1d(n: int) -> LinearMap:
    """Periodic forward differences (Gu)_i = u_{i+1 mod n} - u_i."""
    if n < 2:
        raise InvalidDimensionError(f"grad_1d needs n >= 2, got {n}")
    idx = np.arange(n)
    return LinearMap(
        domain_dim=n,
        codomain_dim=n,
        forward=lambda u: np.roll(u, -1) - u,
        adjoint=lambda y: np.roll(y, 1) - y,
        norm_bound=2.0,
        name=f"grad_1d({n})",
        edges=np.column_stack([idx, (idx + 1) % n]),
    )


def grad_2d(shape: Shape) -> LinearMap:
    """Periodic differences along axis 0 (first block) then axis 1 (second block)."""
    if not shape.is_2d or min(shape.dims) < 2:
        raise InvalidDimensionError(f"grad_2d needs a 2D shape with both sides >= 2, got {shape.dims}")
    n1, n2 = shape.dims
    n = shape.size

    def forward(u):
        img = u.reshape(n1, n2)
        d0 = np.roll(img, -1, axis=0) - img
        d1 = np.roll(img, -1, axis=1) - img
        return np.concatenate([d0.ravel(), d1.ravel()])

    def adjoint(y):
        y0 = y[:n].reshape(n1, n2)
        y1 = y[n:].reshape(n1, n2)
        out = np.roll(y0, 1, axis=0) - y0 + np.roll(y1, 1, axis=1) - y1
        return out.ravel()

    grid = np.arange(n).reshape(n1, n2)
    edges = np.vstack([
        np.column_stack([grid.ravel(), np.roll(grid, -1, axis=0).ravel()]),
        np.column_stack([grid.ravel(), np.roll(grid, -1, axis=1).ravel()]),
    ])
    return LinearMap(
        domain_dim=n,
        codomain_dim=2 * n,
        forward=forward,
        adjoint=adjoint,
        norm_bound=math.sqrt(8.0),
        name=f"grad_2d({n1}x{n2})",
        edges=edges,
    )


def gaussian_taps(bandwidth: float) -> np.ndarray:
    """Normalized 1D Gaussian truncated at ceil(4 * bandwidth)."""
    if not bandwidth > 0:
        raise ParameterError(f"bandwidth must be positive, got {bandwidth}")
    radius = math.ceil(GAUSS_TRUNCATE * bandwidth)
    t = np.arange(-radius, radius + 1)
    taps = np.exp(-0.5 * (t / bandwidth) ** 2)
    return taps / taps.sum()


def _circular_filter(img: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    n = img.shape[axis]
    if taps.size <= n:
        return ndimage.correlate1d(img, taps, axis=axis, mode="wrap")
    # kernel wider than the image: fold the taps onto the period first
    radius = taps.size // 2
    folded = np.zeros(n)
    np.add.at(folded, np.arange(-radius, radius + 1) % n, taps)
    out = np.zeros_like(img)
    for shift, w in enumerate(folded):
        if w:
            out += w * np.roll(img, shift, axis=axis)
    return out


def gauss_conv(shape: Shape, bandwidth: float) -> LinearMap:
    """Periodic 2D Gaussian blur; self-adjoint since the kernel is symmetric."""
    if not shape.is_2d:
        raise InvalidDimensionError(f"gauss_conv needs a 2D shape, got {shape.dims}")
    taps = gaussian_taps(bandwidth)
    n1, n2 = shape.dims

    def blur(x):
        img = x.reshape(n1, n2)
        img = _circular_filter(img, taps, axis=0)
        img = _circular_filter(img, taps, axis=1)
        return img.ravel()

    return LinearMap(
        domain_dim=shape.size,
        codomain_dim=shape.size,
        forward=blur,
        adjoint=blur,
        norm_bound=1.0,
        name=f"gauss_conv({n1}x{n2}, bw={bandwidth:g})",
    )


def op_norm(A: LinearMap, iters: int = POWER_ITERS, seed: int = 0) -> float:
    """Power-iteration estimate of the spectral norm of A."""
    if iters < 1:
        raise ParameterError(f"iters must be >= 1, got {iters}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(A.domain_dim)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(iters):
        y = A.forward(x)
        # ||A x|| with unit x is the Rayleigh quotient of A^T A, nondecreasing
        estimate = float(np.linalg.norm(y))
        x = A.adjoint(y)
        nrm = np.linalg.norm(x)
        if nrm == 0.0:
            return 0.0
        x /= nrm
    return estimate


def adjoint_mismatch(A: LinearMap, trials: int = 100, seed: int = 0) -> float:
    """Largest relative gap |<Ax, y> - <x, A^T y>| over random pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(A.domain_dim)
        y = rng.standard_normal(A.codomain_dim)
        Ax = A.apply(x)
        lhs = Ax @ y
        rhs = x @ A.apply_adjoint(y)
        scale = max(np.linalg.norm(Ax) * np.linalg.norm(y), np.finfo(float).tiny)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst
