"""Block-wise nonlocal means with a quantized kernel.

With a piecewise-constant kernel the filter is locally affine in f: the
weights are frozen on each affinity region, so the same weighted average
applied to a direction delta is the Jacobian-vector product J* delta.

Weights and their patch aggregation are built one window offset at a time
from box sums of shifted-difference images, which costs O(N s^2) whatever
the patch size.  Boundaries are periodic.

Usage:
    cfg = NlmConfig(patch_half=1, window_half=3, noise_sigma=20.0)
    W = nlm_weights(noisy, cfg)
    u = nlm_apply(noisy, W)
    du = nlm_jvp(delta, W)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from debiasing.errors import InvalidDimensionError, ParameterError

KERNEL_LEVELS = 16


@dataclass(frozen=True)
class NlmConfig:
    patch_half: int = 1
    window_half: int = 3
    noise_sigma: float = 20.0
    kernel_levels: int = KERNEL_LEVELS

    def __post_init__(self):
        if self.patch_half < 0 or self.window_half < 1:
            raise ParameterError(
                f"need patch_half >= 0 and window_half >= 1, got {self.patch_half}, {self.window_half}"
            )
        if not self.noise_sigma > 0:
            raise ParameterError(f"noise_sigma must be positive, got {self.noise_sigma}")
        if self.kernel_levels < 2:
            raise ParameterError(f"kernel_levels must be >= 2, got {self.kernel_levels}")

    @property
    def kernel_cutoffs(self) -> np.ndarray:
        """Increasing distances at which the kernel drops one level."""
        q = self.kernel_levels
        return np.log(q / np.arange(q - 1, 0, -1))

    def kernel_level(self, d: np.ndarray) -> np.ndarray:
        """Integer level m in [0, Q - 1] with Q exp(-d) in (m, m + 1]; 0 once Q exp(-d) <= 1."""
        scaled = self.kernel_levels * np.exp(-np.asarray(d, dtype=float))
        return np.maximum(np.ceil(scaled) - 1.0, 0.0)

    def kernel(self, d: np.ndarray) -> np.ndarray:
        """Quantized exp(-d): levels m / (Q - 1), equal to 1 at d = 0."""
        return self.kernel_level(d) / (self.kernel_levels - 1)


@dataclass(frozen=True)
class NlmWeights:
    """Per-offset weight planes w and aggregated planes w_bar.

    Plane k holds the weight between pixel i and pixel i + offsets[k], as
    integer kernel levels (units of 1 / (Q - 1)); the normalized average does
    not depend on the unit.
    """

    offsets: np.ndarray
    w: np.ndarray
    wbar: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.w.shape[1:]


def box_sum(plane: np.ndarray, half: int) -> np.ndarray:
    """Periodic sum over the (2 half + 1)^2 box centred on each pixel."""
    if half == 0:
        return plane.copy()
    width = 2 * half + 1
    out = np.pad(plane, half, mode="wrap")
    for axis in (0, 1):
        c = np.cumsum(out, axis=axis)
        c = np.insert(c, 0, 0.0, axis=axis)
        n = c.shape[axis] - width
        out = np.take(c, np.arange(width, width + n), axis=axis) - np.take(c, np.arange(n), axis=axis)
    return out


def _shift(img: np.ndarray, offset) -> np.ndarray:
    """shifted[i] = img[i + offset], periodic."""
    dy, dx = offset
    return np.roll(img, (-dy, -dx), axis=(0, 1))


def nlm_weights(f: np.ndarray, cfg: NlmConfig) -> NlmWeights:
    img = np.asarray(f, dtype=float)
    if img.ndim != 2:
        raise InvalidDimensionError(f"nlm needs a 2D image, got shape {img.shape}")
    p, s = cfg.patch_half, cfg.window_half
    if min(img.shape) < 2 * p + 1:
        raise InvalidDimensionError(f"image {img.shape} is smaller than a {2 * p + 1}x{2 * p + 1} patch")

    offsets = np.array([(dy, dx) for dy in range(-s, s + 1) for dx in range(-s, s + 1)])
    w = np.empty((len(offsets),) + img.shape)
    wbar = np.empty_like(w)
    scale = 2.0 * cfg.noise_sigma**2
    for k, offset in enumerate(offsets):
        dist = box_sum((img - _shift(img, offset)) ** 2, p)
        w[k] = cfg.kernel_level(dist / scale)
        wbar[k] = box_sum(w[k], p)
    return NlmWeights(offsets, w, wbar)


def _weighted_average(x: np.ndarray, W: NlmWeights) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    flat = x.ndim == 1
    if x.size != W.wbar[0].size:
        raise InvalidDimensionError(f"expected {W.shape} values, got shape {x.shape}")
    img = x.reshape(W.shape)
    num = np.zeros(W.shape)
    for k, offset in enumerate(W.offsets):
        num += W.wbar[k] * _shift(img, offset)
    out = num / W.wbar.sum(axis=0)
    return out.ravel() if flat else out


def nlm_apply(f: np.ndarray, W: NlmWeights) -> np.ndarray:
    """u*_i = sum_j wbar_ij f_j / sum_j wbar_ij."""
    return _weighted_average(f, W)


def nlm_jvp(delta: np.ndarray, W: NlmWeights) -> np.ndarray:
    """J* delta with the weights frozen at f."""
    return _weighted_average(delta, W)


def nlm_denoise(f: np.ndarray, cfg: NlmConfig):
    """Return u* and the Jacobian-vector product at f (both on flat vectors)."""
    img = np.asarray(f, dtype=float)
    W = nlm_weights(img, cfg)
    return nlm_apply(img.ravel(), W), lambda delta: nlm_jvp(delta, W)
