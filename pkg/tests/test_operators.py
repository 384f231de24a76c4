"""Forward models: adjoint correctness, matrix views, and shape handling."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from rdplab.operators import (
    CircularConv,
    DenseLinear,
    LinearScattering,
    Mask,
    PhaseRetrieval,
    UnsupportedOperationError,
    make_gaussian_blur_kernel,
    make_scattering_propagator,
)


def _check_adjoint(model, rng, n_trials=5, rtol=1e-10):
    # <v, F(u)> == <vjp(., v), u> for linear models
    for _ in range(n_trials):
        u = rng.standard_normal(model.d_x)
        v = rng.standard_normal(model.d_y)
        lhs = float(v @ model.apply(u))
        rhs = float(model.vjp(u, v) @ u)
        assert lhs == pytest.approx(rhs, rel=rtol, abs=1e-12)


def _models():
    rng = np.random.default_rng(17)
    prop = make_scattering_propagator((3, 3), 0.5, np.random.default_rng(1), 7)
    return [
        DenseLinear(rng.standard_normal((4, 6))),
        Mask(np.array([1.0, 0.0, 1.0, 1.0, 0.0])),
        CircularConv(make_gaussian_blur_kernel(1.0, 3), (4, 4)),
        CircularConv(np.array([0.25, 0.5, 0.25]), (8,)),
        LinearScattering(prop, u_in=rng.standard_normal(9)),
    ]


@pytest.mark.parametrize("model", _models(), ids=lambda m: type(m).__name__)
def test_linear_adjoint(model):
    _check_adjoint(model, np.random.default_rng(23))


@pytest.mark.parametrize("model", _models(), ids=lambda m: type(m).__name__)
def test_as_matrix_reproduces_apply(model):
    A = model.as_matrix()
    assert A.shape == (model.d_y, model.d_x)
    rng = np.random.default_rng(5)
    x = rng.standard_normal(model.d_x)
    assert_allclose(model.apply(x), A @ x, rtol=1e-10, atol=1e-12)
    X = rng.standard_normal((3, model.d_x))
    assert_allclose(model.apply(X), X @ A.T, rtol=1e-10, atol=1e-12)


def test_svd_is_cached_and_consistent():
    model = DenseLinear(np.random.default_rng(2).standard_normal((3, 5)))
    u1, s1, vt1 = model.svd()
    u2, _, _ = model.svd()
    assert u1 is u2  # cached, not recomputed
    assert_allclose(u1 * s1 @ vt1, model.as_matrix(), rtol=1e-12, atol=1e-14)


def test_batch_and_single_shapes():
    model = DenseLinear(np.random.default_rng(0).standard_normal((3, 4)))
    x = np.zeros(4)
    assert model.apply(x).shape == (3,)
    assert model.apply(np.zeros((7, 4))).shape == (7, 3)
    assert model.vjp(x, np.zeros(3)).shape == (4,)
    assert model.vjp(np.zeros((7, 4)), np.zeros((7, 3))).shape == (7, 4)
    # single state broadcasts against a batch of cotangents
    assert model.vjp(x, np.zeros((7, 3))).shape == (7, 4)
    with pytest.raises(ValueError):
        model.apply(np.zeros(5))
    with pytest.raises(ValueError):
        model.vjp(np.zeros((2, 4)), np.zeros((3, 3)))


def test_mask_validation_and_matrix():
    with pytest.raises(ValueError):
        Mask(np.array([0.5, 1.0]))
    with pytest.raises(ValueError):
        Mask(np.ones(6), grid_shape=(2, 2))
    m = Mask(np.array([1.0, 0.0, 1.0]))
    assert_allclose(m.as_matrix(), np.diag([1.0, 0.0, 1.0]), rtol=0, atol=0)


def test_circular_conv_delta_kernel_is_identity():
    delta = np.zeros((3, 3))
    delta[1, 1] = 1.0  # embedded center lands at the origin
    model = CircularConv(delta, (5, 5))
    x = np.random.default_rng(4).standard_normal(25)
    assert_allclose(model.apply(x), x, rtol=0, atol=1e-12)


def test_circular_conv_matches_direct_rolls():
    kernel = np.array([0.2, 0.5, 0.3])
    model = CircularConv(kernel, (6,))
    x = np.random.default_rng(6).standard_normal(6)
    # true convolution: kernel offset j - center hits x[n - (j - center)]
    want = 0.5 * x + 0.3 * np.roll(x, 1) + 0.2 * np.roll(x, -1)
    assert_allclose(model.apply(x), want, rtol=1e-12, atol=1e-12)


def test_circular_conv_preserves_mean_for_normalized_kernel():
    model = CircularConv(make_gaussian_blur_kernel(1.5, 5), (8, 8))
    x = np.full(64, 0.37)
    assert_allclose(model.apply(x), x, rtol=1e-12)


def test_circular_conv_validation():
    with pytest.raises(ValueError, match="odd"):
        CircularConv(np.ones((2, 2)) / 4.0, (4, 4))
    with pytest.raises(ValueError, match="rank"):
        CircularConv(np.ones(3) / 3.0, (4, 4))
    with pytest.raises(ValueError, match="larger"):
        CircularConv(np.ones((5, 5)) / 25.0, (3, 3))


def test_blur_kernel_normalization_and_symmetry():
    k = make_gaussian_blur_kernel(2.0, 7)
    assert k.shape == (7, 7)
    assert k.sum() == pytest.approx(1.0, rel=1e-12)
    assert_allclose(k, k[::-1, ::-1], rtol=0, atol=0)
    with pytest.raises(ValueError):
        make_gaussian_blur_kernel(2.0, 6)
    with pytest.raises(ValueError):
        make_gaussian_blur_kernel(0.0, 5)


def test_scattering_propagator_formula():
    rng = np.random.default_rng(12)
    H = make_scattering_propagator((2, 2), 0.7, rng, n_receivers=3, amplitude=2.0)
    assert H.shape == (3, 4)
    pts = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    recv = np.random.default_rng(12).uniform(0.0, 1.0, size=(3, 2))
    dist = np.linalg.norm(recv[:, None, :] - pts[None, :, :], axis=2)
    assert_allclose(H, 2.0 / (1.0 + dist / 0.7), rtol=1e-12)
    # same seed, same matrix
    H2 = make_scattering_propagator((2, 2), 0.7, np.random.default_rng(12), 3, 2.0)
    assert np.array_equal(H, H2)


def test_linear_scattering_matrix_includes_incident_field():
    H = np.arange(6.0).reshape(2, 3) + 1.0
    u_in = np.array([1.0, -2.0, 0.5])
    model = LinearScattering(H, u_in)
    assert_allclose(model.as_matrix(), H * u_in[None, :], rtol=0, atol=0)
    _check_adjoint(model, np.random.default_rng(3))


def test_phase_retrieval_forward_matches_rfft2():
    model = PhaseRetrieval((3, 4))
    assert model.d_x == 12 and model.d_y == 3 * 3
    x = np.random.default_rng(7).standard_normal(12)
    want = np.abs(np.fft.rfft2(x.reshape(3, 4))).ravel()
    assert_allclose(model.apply(x), want, rtol=1e-12)


def test_phase_retrieval_vjp_matches_numeric_gradient():
    model = PhaseRetrieval((3, 3))
    rng = np.random.default_rng(8)
    x = rng.standard_normal(model.d_x)
    v = rng.standard_normal(model.d_y)
    got = model.vjp(x, v)
    h = 1e-6
    num = np.zeros(model.d_x)
    for i in range(model.d_x):
        e = np.zeros(model.d_x)
        e[i] = h
        num[i] = (v @ model.apply(x + e) - v @ model.apply(x - e)) / (2.0 * h)
    assert_allclose(got, num, rtol=1e-5, atol=1e-7)


def test_phase_retrieval_vjp_finite_at_zero_magnitude():
    model = PhaseRetrieval((2, 2))
    g = model.vjp(np.zeros(4), np.ones(model.d_y))
    assert np.all(np.isfinite(g))


def test_phase_retrieval_refuses_linear_only_operations():
    model = PhaseRetrieval((2, 2))
    with pytest.raises(UnsupportedOperationError):
        model.as_matrix()
    with pytest.raises(UnsupportedOperationError):
        model.svd()
