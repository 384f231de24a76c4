"""Weight families, influence functions, adaptive scales, boundedness checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from rdplab.weights import (
    IMQ,
    GlobalScale,
    Huber,
    Mahalanobis,
    Uniform,
    adaptive_c,
    check_robust_condition,
    psi,
    residual_weights,
    weight,
    weight_deriv,
)

finite_residuals = st.floats(
    min_value=-1e8, max_value=1e8, allow_nan=False, allow_infinity=False
)


def test_imq_closed_form():
    wf = IMQ(c=2.0)
    r = np.array([0.0, 1.0, -3.0, 10.0])
    assert_allclose(weight(wf, r), (1.0 + (r / 2.0) ** 2) ** -0.5, rtol=1e-15)
    assert weight(wf, np.array([0.0]))[0] == 1.0


@given(r=finite_residuals, c=st.floats(min_value=1e-3, max_value=1e3))
@settings(max_examples=200, deadline=None)
def test_imq_influence_is_bounded_by_c(r, c):
    assert abs(r * IMQ(c).weight(r)) <= c * (1.0 + 1e-12)


def test_huber_knee():
    wf = Huber(delta=1.5)
    inside = np.array([-1.4, 0.0, 1.0])
    outside = np.array([-3.0, 2.0, 100.0])
    assert_allclose(weight(wf, inside), 1.0, rtol=0, atol=0)
    assert_allclose(weight(wf, outside), 1.5 / np.abs(outside), rtol=1e-15)
    # |r w(r)| saturates exactly at delta past the knee
    assert_allclose(np.abs(outside * weight(wf, outside)), 1.5, rtol=1e-15)


@given(r=finite_residuals, delta=st.floats(min_value=1e-3, max_value=1e3))
@settings(max_examples=200, deadline=None)
def test_huber_weight_never_exceeds_one(r, delta):
    w = float(Huber(delta).weight(r))
    assert 0.0 < w <= 1.0
    assert abs(r * w) <= delta * (1.0 + 1e-12)


def test_mahalanobis_per_component_scales():
    wf = Mahalanobis(c=2.0, scales=np.array([1.0, 4.0]))
    r = np.array([2.0, 2.0])
    got = weight(wf, r)
    # larger scale weakens the downweighting of the same residual
    assert got[1] > got[0]
    assert_allclose(got, (1.0 + r**2 / (wf.scales * 4.0)) ** -0.5, rtol=1e-15)
    # scalar scale reduces to IMQ
    assert_allclose(
        weight(Mahalanobis(c=2.0, scales=1.0), r), weight(IMQ(2.0), r), rtol=0
    )


def test_psi_uniform_is_plain_influence():
    r = np.linspace(-5.0, 5.0, 101)
    sigma = 0.7
    got = psi(Uniform(), r, sigma)
    assert np.array_equal(got, r / sigma**2)


@pytest.mark.parametrize("wf", [IMQ(1.3), Mahalanobis(0.8, 2.0)])
def test_psi_matches_numeric_loss_derivative(wf):
    # psi is the derivative of rho(r) = w(r) r^2 / (2 sigma^2)
    sigma = 0.5
    h = 1e-6

    def rho(r):
        return wf.weight(r) * r * r / (2.0 * sigma**2)

    r = np.linspace(-4.0, 4.0, 41)
    num = (rho(r + h) - rho(r - h)) / (2.0 * h)
    assert_allclose(psi(wf, r, sigma), num, rtol=1e-6, atol=1e-8)


def test_psi_rejects_bad_sigma():
    with pytest.raises(ValueError):
        psi(IMQ(1.0), np.zeros(3), 0.0)


def test_residual_weights_uniform_and_none_are_ones():
    R = np.random.default_rng(0).standard_normal((4, 6))
    assert np.array_equal(residual_weights(None, R), np.ones_like(R))
    assert np.array_equal(residual_weights(Uniform(), R), np.ones_like(R))


def test_residual_weights_global_scale_is_shared_per_row():
    wf = GlobalScale(c_g=2.0, eps_g=1e-3)
    R = np.array([[3.0, 4.0], [0.0, 0.0]])
    got = residual_weights(wf, R)
    assert_allclose(got[0], 2.0 / (1e-3 + 5.0), rtol=1e-15)
    assert_allclose(got[1], 2.0 / 1e-3, rtol=1e-15)
    assert got[0, 0] == got[0, 1]  # one weight for the whole row


def test_residual_weights_scale_override_per_chain():
    wf = IMQ(c=1.0)
    R = np.array([[2.0, -2.0], [2.0, -2.0]])
    c = np.array([[1.0], [10.0]])
    got = residual_weights(wf, R, c=c)
    assert_allclose(got[0], (1.0 + 4.0) ** -0.5, rtol=1e-15)
    assert_allclose(got[1], (1.0 + 4.0 / 100.0) ** -0.5, rtol=1e-15)


def test_adaptive_c_quantile_and_floor():
    ar = np.array([0.1, 0.2, 0.3, 0.4])
    assert adaptive_c(ar, 1.0) == pytest.approx(0.4)
    assert adaptive_c(ar, 0.5) == pytest.approx(np.quantile(ar, 0.5))
    assert adaptive_c(np.array([0.0, 0.0]), 0.9, c_min=1e-8) == 1e-8
    # batched rows give one threshold per row, broadcastable
    batched = adaptive_c(np.array([[0.1, 0.2], [1.0, 2.0]]), 1.0)
    assert batched.shape == (2, 1)
    assert_allclose(batched.ravel(), [0.2, 2.0], rtol=1e-15)


def test_adaptive_c_validation():
    with pytest.raises(ValueError):
        adaptive_c(np.array([]), 0.9)
    with pytest.raises(ValueError):
        adaptive_c(np.ones(3), 0.0)
    with pytest.raises(ValueError):
        adaptive_c(np.ones(3), 0.9, c_min=0.0)
    with pytest.raises(ValueError):
        adaptive_c(np.ones((2, 2, 2)), 0.9)


def test_robust_condition_verdicts():
    assert check_robust_condition(Uniform()).verdict == "non_robust"
    for wf in (IMQ(1.0), Huber(1.0), Mahalanobis(1.0, 1.0), GlobalScale(1.0)):
        assert check_robust_condition(wf).verdict == "robust"


def test_robust_condition_reports_imq_sup():
    rep = check_robust_condition(IMQ(c=3.0), r_max=1e6)
    assert rep.sup_rw == pytest.approx(3.0, abs=1e-3 * 3.0)
    assert rep.growth_rw < 1.05
    with pytest.raises(ValueError):
        check_robust_condition(IMQ(1.0), r_max=-1.0)


def test_family_parameter_validation():
    for bad in (IMQ, Huber, GlobalScale):
        with pytest.raises(ValueError):
            bad(-1.0)
    with pytest.raises(ValueError):
        Mahalanobis(1.0, scales=np.array([1.0, -2.0]))


def test_weight_deriv_sign_opposes_residual():
    # all bounded families shrink their weight as |r| grows
    r = np.array([0.5, 2.0, 7.0])
    for wf in (IMQ(1.0), Huber(1.0), Mahalanobis(1.0, 1.0)):
        assert np.all(weight_deriv(wf, r) <= 0.0)
        assert np.all(weight_deriv(wf, -r) >= 0.0)
