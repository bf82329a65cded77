import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from debiasing.errors import InvalidDimensionError, ParameterError
from debiasing.linops import (
    DENSE_LIMIT,
    LinearMap,
    Shape,
    Signal,
    adjoint_mismatch,
    gauss_conv,
    gaussian_taps,
    grad_1d,
    grad_2d,
    identity,
    op_norm,
    zeros,
)


def test_grad_1d_examples():
    G = grad_1d(4)
    assert_array_equal(G(np.full(4, 5.0)), np.zeros(4))
    assert_array_equal(G(np.array([0.0, 1.0, 0.0, 0.0])), [1.0, -1.0, 0.0, 0.0])
    assert_array_equal(G.apply_adjoint(np.array([1.0, 0.0, 0.0, 0.0])), [-1.0, 1.0, 0.0, 0.0])


def test_grad_1d_matches_circulant_matrix():
    n = 5
    D = np.roll(np.eye(n), 1, axis=1) - np.eye(n)
    assert_array_equal(grad_1d(n).as_matrix(), D)


def test_grad_1d_rejects_short_signal():
    with pytest.raises(InvalidDimensionError):
        grad_1d(1)


def test_grad_2d_constant_image():
    G = grad_2d(Shape.two_d(3, 3))
    assert G.codomain_dim == 18
    assert_array_equal(G(np.full(9, 7.0)), np.zeros(18))


def test_grad_2d_single_pixel_indicator():
    G = grad_2d(Shape.two_d(2, 2))
    e = np.zeros(4)
    e[0] = 1.0
    y = G(e)
    for block in (y[:4], y[4:]):
        assert sorted(block[block != 0]) == [-1.0, 1.0]


@pytest.mark.parametrize("dims", [(6,), (1, 4), (3, 1)])
def test_grad_2d_rejects_degenerate_shapes(dims):
    with pytest.raises(InvalidDimensionError):
        grad_2d(Shape(dims))


def test_difference_adjoints_annihilate_constants():
    assert_array_equal(grad_1d(6).apply_adjoint(np.full(6, 3.0)), np.zeros(6))
    assert_array_equal(grad_2d(Shape.two_d(3, 4)).apply_adjoint(np.full(24, -2.0)), np.zeros(12))


@pytest.mark.parametrize(
    "op",
    [
        identity(6),
        grad_1d(7),
        grad_2d(Shape.two_d(4, 5)),
        gauss_conv(Shape.two_d(8, 8), 1.5),
        gauss_conv(Shape.two_d(4, 6), 2.0),
        LinearMap.from_matrix(np.random.default_rng(3).standard_normal((3, 5))),
    ],
    ids=lambda op: op.name,
)
def test_adjoint_consistency(op):
    assert adjoint_mismatch(op, trials=100, seed=1) < 1e-10


def test_gaussian_taps_normalized_and_truncated():
    taps = gaussian_taps(2.0)
    assert taps.size == 2 * 8 + 1
    assert_allclose(taps.sum(), 1.0, rtol=1e-14)
    assert_array_equal(taps, taps[::-1])


def test_gauss_conv_rejects_bad_bandwidth():
    with pytest.raises(ParameterError):
        gauss_conv(Shape.two_d(4, 4), 0.0)


def test_gauss_conv_keeps_constants():
    Phi = gauss_conv(Shape.two_d(10, 12), 2.0)
    assert_allclose(Phi(np.full(120, 42.0)), 42.0, rtol=1e-12)


def test_gauss_conv_of_delta_is_the_kernel():
    n = 16
    Phi = gauss_conv(Shape.two_d(n, n), 1.0)
    delta = np.zeros((n, n))
    delta[8, 8] = 1.0
    out = Phi(delta.ravel()).reshape(n, n)
    taps = gaussian_taps(1.0)
    r = taps.size // 2
    assert_allclose(out.sum(), 1.0, atol=1e-12)
    assert_allclose(out[8 - r:8 + r + 1, 8 - r:8 + r + 1], np.outer(taps, taps), atol=1e-15)


@pytest.mark.parametrize("side, bandwidth", [(8, 1.0), (8, 2.0), (5, 3.0)])
def test_gauss_conv_preserves_mean(side, bandwidth):
    x = np.random.default_rng(0).uniform(0, 255, side * side)
    Phi = gauss_conv(Shape.two_d(side, side), bandwidth)
    assert_allclose(Phi(x).mean(), x.mean(), rtol=1e-12)


def test_op_norm_examples():
    assert_allclose(op_norm(identity(8)), 1.0, atol=1e-8)
    assert_allclose(op_norm(grad_1d(8)), 2.0, atol=1e-6)
    assert_allclose(op_norm(LinearMap.from_matrix([[3.0, 0.0], [0.0, 1.0]])), 3.0, atol=1e-8)
    assert op_norm(zeros(3, 4)) == 0.0


def test_op_norm_grad_2d_bounded():
    for dims in [(4, 4), (5, 7), (6, 6)]:
        assert op_norm(grad_2d(Shape(dims))) <= math.sqrt(8.0) + 1e-12


def test_op_norm_monotone_and_deterministic():
    A = LinearMap.from_matrix(np.random.default_rng(7).standard_normal((6, 6)))
    estimates = [op_norm(A, iters=k, seed=2) for k in range(1, 25)]
    assert all(b >= a - 1e-12 for a, b in zip(estimates, estimates[1:]))
    assert op_norm(A, iters=10, seed=2) == estimates[9]


def test_op_norm_rejects_zero_iterations():
    with pytest.raises(ParameterError):
        op_norm(identity(3), iters=0)


def test_apply_checks_lengths():
    G = grad_1d(4)
    with pytest.raises(InvalidDimensionError):
        G(np.zeros(5))
    with pytest.raises(InvalidDimensionError):
        G.apply_adjoint(np.zeros(3))


def test_dense_limit():
    with pytest.raises(InvalidDimensionError):
        identity(DENSE_LIMIT + 1).as_matrix()


def test_aslinearoperator_matches_matrix():
    M = np.arange(6.0).reshape(2, 3)
    op = LinearMap.from_matrix(M).aslinearoperator()
    x, y = np.array([1.0, -1.0, 2.0]), np.array([0.5, 3.0])
    assert_allclose(op.matvec(x), M @ x)
    assert_allclose(op.rmatvec(y), M.T @ y)


def test_signal_validation():
    img = np.arange(6.0).reshape(2, 3)
    s = Signal.from_array(img)
    assert s.shape.dims == (2, 3)
    assert_array_equal(s.image(), img)
    with pytest.raises(InvalidDimensionError):
        Signal(np.zeros(5), Shape.two_d(2, 3))
    with pytest.raises(InvalidDimensionError):
        Signal(np.array([0.0, np.nan]), Shape.one_d(2))
    with pytest.raises(InvalidDimensionError):
        Shape((0,))
