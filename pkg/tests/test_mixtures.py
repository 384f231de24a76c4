"""Gaussian-mixture densities, scores, diffused marginals, and conjugate oracles.

Derivative identities are checked against central differences; conditioning
identities are checked against hand-computed single-Gaussian formulas, which
exercise an independent derivation path.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats
from scipy.special import logsumexp

from rdplab import mixtures as mx
from rdplab.mixtures import GaussianMixture
from rdplab.schedules import make_linear_schedule


def _mixture_2d() -> GaussianMixture:
    return GaussianMixture(
        weights=np.array([0.3, 0.5, 0.2]),
        means=np.array([[0.0, 0.0], [1.5, -0.5], [-1.0, 1.0]]),
        covs=np.array([[0.5, 0.8], [0.3, 0.3], [1.2, 0.4]]),
    )


def _mixture_dense() -> GaussianMixture:
    covs = np.array(
        [
            [[0.6, 0.2], [0.2, 0.5]],
            [[1.1, -0.3], [-0.3, 0.4]],
        ]
    )
    return GaussianMixture(
        weights=np.array([0.4, 0.6]),
        means=np.array([[0.5, -0.2], [-0.7, 0.9]]),
        covs=covs,
    )


def _numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def test_constructor_validation():
    with pytest.raises(ValueError):
        GaussianMixture(np.array([0.5, 0.4]), np.zeros((2, 1)), np.ones((2, 1)))
    with pytest.raises(ValueError):
        GaussianMixture(np.array([1.0]), np.zeros((1, 2)), np.ones((1, 3)))
    with pytest.raises(ValueError):
        GaussianMixture(np.array([1.0]), np.zeros((1, 1)), -np.ones((1, 1)))


@pytest.mark.parametrize("gm_factory", [_mixture_2d, _mixture_dense])
def test_log_density_matches_scipy(gm_factory):
    gm = gm_factory()
    rng = np.random.default_rng(0)
    X = rng.standard_normal((40, gm.dim)) * 2.0
    covs = [np.diag(c) if gm.is_diagonal else c for c in gm.covs]
    comps = [
        stats.multivariate_normal(mean=m, cov=c).logpdf(X)
        for m, c in zip(gm.means, covs)
    ]
    want = logsumexp(np.log(gm.weights)[:, None] + np.array(comps), axis=0)
    assert_allclose(mx.log_density(gm, X), want, rtol=1e-12)
    # scalar path agrees with the batch path
    assert mx.log_density(gm, X[0]) == pytest.approx(want[0], rel=1e-12)


def test_responsibilities_sum_to_one():
    gm = _mixture_2d()
    x = np.array([0.3, -0.1])
    resp = mx.responsibilities(gm, x)
    assert resp.shape == (3,)
    assert resp.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(resp > 0.0)


@pytest.mark.parametrize("gm_factory", [_mixture_2d, _mixture_dense])
def test_score_matches_numeric_gradient(gm_factory):
    gm = gm_factory()
    rng = np.random.default_rng(1)
    for _ in range(5):
        x = rng.standard_normal(gm.dim) * 1.5
        want = _numeric_grad(lambda z: mx.log_density(gm, z), x)
        assert_allclose(mx.score(gm, x), want, rtol=1e-5, atol=1e-7)


@pytest.mark.parametrize("gm_factory", [_mixture_2d, _mixture_dense])
def test_hessian_matches_numeric_jacobian_of_score(gm_factory):
    gm = gm_factory()
    x = np.array([0.2, 0.6])
    h = 1e-5
    num = np.zeros((gm.dim, gm.dim))
    for j in range(gm.dim):
        e = np.zeros(gm.dim)
        e[j] = h
        num[:, j] = (mx.score(gm, x + e) - mx.score(gm, x - e)) / (2.0 * h)
    got = mx.hessian(gm, x)
    assert_allclose(got, num, rtol=1e-4, atol=1e-6)
    assert_allclose(got, got.T, rtol=0, atol=1e-12)


def test_hessian_matvec_consistent_with_hessian():
    gm = _mixture_dense()
    rng = np.random.default_rng(2)
    x = rng.standard_normal(2)
    u = rng.standard_normal(2)
    assert_allclose(mx.hessian_matvec(gm, x, u), mx.hessian(gm, x) @ u, rtol=1e-12)
    # batched states map to batched products
    X = rng.standard_normal((4, 2))
    U = rng.standard_normal((4, 2))
    got = mx.hessian_matvec(gm, X, U)
    want = np.stack([mx.hessian(gm, X[i]) @ U[i] for i in range(4)])
    assert_allclose(got, want, rtol=1e-12)


def test_marginal_at_t_moments():
    gm = _mixture_2d()
    sched = make_linear_schedule(1e-3, 0.05, 100)
    t = 70
    ab = sched.alpha_bar(t)
    marg = mx.marginal_at_t(gm, sched, t)
    assert_allclose(marg.means, np.sqrt(ab) * gm.means, rtol=1e-15)
    assert_allclose(marg.covs, ab * gm.covs + (1.0 - ab), rtol=1e-15)
    # forward-perturbed prior draws are distributed per the diffused marginal
    rng = np.random.default_rng(8)
    x0 = mx.sample(gm, 40000, rng)
    xt = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * rng.standard_normal(x0.shape)
    mean_w = (gm.weights[:, None] * marg.means).sum(axis=0)
    assert_allclose(xt.mean(axis=0), mean_w, atol=0.03)


def test_tweedie_denoise_equals_conditional_mean():
    gm = _mixture_dense()
    sched = make_linear_schedule(1e-3, 0.05, 100)
    rng = np.random.default_rng(3)
    for t in (5, 50, 95):
        x_t = rng.standard_normal(gm.dim)
        s = mx.score(mx.marginal_at_t(gm, sched, t), x_t)
        got = mx.tweedie_denoise(x_t, s, t, sched)
        post = mx.posterior_x0_given_xt(gm, sched, t, x_t)
        want = (post.weights[:, None] * post.means).sum(axis=0)
        assert_allclose(got, want, rtol=0, atol=1e-10)


def test_posterior_x0_given_xt_single_gaussian_closed_form():
    mu = np.array([[0.7, -0.3]])
    var = 1.8
    gm = GaussianMixture(np.array([1.0]), mu, np.full((1, 2), var))
    sched = make_linear_schedule(1e-3, 0.05, 100)
    t = 40
    ab = sched.alpha_bar(t)
    x_t = np.array([0.2, 1.1])
    post = mx.posterior_x0_given_xt(gm, sched, t, x_t)
    s = ab * var + (1.0 - ab)
    want_mean = mu[0] + np.sqrt(ab) * var / s * (x_t - np.sqrt(ab) * mu[0])
    want_var = var * (1.0 - ab) / s
    assert_allclose(post.means[0], want_mean, rtol=1e-12)
    assert_allclose(post.covs[0], want_var, rtol=1e-12)
    assert post.weights[0] == pytest.approx(1.0)


def test_posterior_x0_weights_are_marginal_responsibilities():
    gm = _mixture_2d()
    sched = make_linear_schedule(1e-3, 0.05, 100)
    t = 30
    x_t = np.array([0.5, -0.4])
    post = mx.posterior_x0_given_xt(gm, sched, t, x_t)
    marg = mx.marginal_at_t(gm, sched, t)
    assert_allclose(post.weights, mx.responsibilities(marg, x_t), rtol=1e-12)


def test_posterior_linear_single_gaussian_conjugate_formula():
    mu = np.array([0.4, -0.6])
    var = 0.8
    gm = GaussianMixture(np.array([1.0]), mu[None, :], np.full((1, 2), var))
    A = np.array([[1.0, 0.5], [0.0, 2.0], [1.0, -1.0]])
    sigma_y = 0.3
    y = np.array([0.7, -0.2, 1.1])
    post = mx.posterior_linear(gm, A, sigma_y, y)
    prec = np.eye(2) / var + A.T @ A / sigma_y**2
    cov = np.linalg.inv(prec)
    mean = cov @ (mu / var + A.T @ y / sigma_y**2)
    assert_allclose(post.means[0], mean, rtol=1e-10)
    assert_allclose(post.covs[0], cov, rtol=1e-10)


def test_posterior_linear_mixture_weights_follow_evidence():
    gm = _mixture_2d()
    A = np.eye(2)
    sigma_y = 0.5
    y = np.array([1.4, -0.6])
    post = mx.posterior_linear(gm, A, sigma_y, y)
    log_ev = np.empty(3)
    for k in range(3):
        s_k = np.diag(gm.covs[k]) + sigma_y**2 * np.eye(2)
        log_ev[k] = stats.multivariate_normal(mean=gm.means[k], cov=s_k).logpdf(y)
    want = np.exp(np.log(gm.weights) + log_ev)
    want /= want.sum()
    assert_allclose(post.weights, want, rtol=1e-10)
    # posterior density integrates the prior-times-likelihood shape: cross-check
    # the density ratio at two points against Bayes' rule
    pts = np.array([[0.9, -0.3], [0.1, 0.2]])
    lik = stats.norm.logpdf(y[None, :], loc=pts, scale=sigma_y).sum(axis=1)
    want_ratio = (mx.log_density(gm, pts) + lik)[0] - (mx.log_density(gm, pts) + lik)[1]
    got_ratio = mx.log_density(post, pts[0]) - mx.log_density(post, pts[1])
    assert got_ratio == pytest.approx(want_ratio, rel=1e-10)


def test_conditional_score_matches_numeric_gradient():
    gm = _mixture_dense()
    sched = make_linear_schedule(1e-3, 0.05, 100)
    A = np.array([[1.0, -0.4], [0.3, 0.9]])
    sigma_y = 0.4
    y = np.array([0.5, -0.1])
    t = 25
    x_t = np.array([0.3, 0.8])
    post = mx.posterior_linear(gm, A, sigma_y, y)
    marg_post = mx.marginal_at_t(post, sched, t)
    want = _numeric_grad(lambda z: mx.log_density(marg_post, z), x_t)
    got = mx.conditional_score(gm, A, sigma_y, y, sched, t, x_t)
    assert_allclose(got, want, rtol=1e-5, atol=1e-7)


def test_tweedie_posterior_cov_matches_conditioning():
    gm = _mixture_dense()
    sched = make_linear_schedule(1e-3, 0.05, 100)
    t = 35
    x_t = np.array([-0.2, 0.5])
    got = mx.tweedie_posterior_cov(gm, sched, t, x_t)
    post = mx.posterior_x0_given_xt(gm, sched, t, x_t)
    mean = (post.weights[:, None] * post.means).sum(axis=0)
    want = np.zeros((2, 2))
    for k in range(post.n_components):
        dm = post.means[k] - mean
        want += post.weights[k] * (post.covs[k] + np.outer(dm, dm))
    assert_allclose(got, want, rtol=1e-8, atol=1e-12)
    assert np.linalg.eigvalsh(got).min() > 0.0


def test_covariance_convention_reconciliation_is_decisive():
    rec = mx.reconcile_covariance_convention()
    assert rec.selected in ("matched", "raw")
    assert rec.max_rel_err[rec.selected] < 1e-8
    others = [v for k, v in rec.max_rel_err.items() if k != rec.selected]
    assert min(others) > 1e-3  # the alternative is clearly wrong, not a tie


def test_tweedie_posterior_cov_rejects_unknown_convention():
    gm = _mixture_2d()
    sched = make_linear_schedule(1e-3, 0.05, 100)
    with pytest.raises(ValueError, match="convention"):
        mx.tweedie_posterior_cov(gm, sched, 10, np.zeros(2), convention="other")


def test_sample_moments_and_determinism():
    gm = _mixture_2d()
    draws = mx.sample(gm, 60000, np.random.default_rng(9))
    mean_w = (gm.weights[:, None] * gm.means).sum(axis=0)
    assert_allclose(draws.mean(axis=0), mean_w, atol=0.02)
    again = mx.sample(gm, 60000, np.random.default_rng(9))
    assert np.array_equal(draws, again)


def test_mixture_score_source_wraps_marginal():
    gm = _mixture_2d()
    sched = make_linear_schedule(1e-3, 0.05, 100)
    src = mx.MixtureScore(gm, sched)
    assert src.has_hessian and src.dim == 2
    x = np.array([0.1, -0.7])
    t = 12
    marg = mx.marginal_at_t(gm, sched, t)
    assert_allclose(src.score(x, t), mx.score(marg, x), rtol=1e-14)
    u = np.array([1.0, 2.0])
    assert_allclose(src.hessian_matvec(x, u, t), mx.hessian(marg, x) @ u, rtol=1e-12)


def test_callable_score_shape_guard():
    sched = make_linear_schedule(1e-3, 0.05, 10)
    src = mx.CallableScore(lambda x, t: np.zeros(3), sched, dim=2)
    assert not src.has_hessian
    with pytest.raises(ValueError, match="shape"):
        src.score(np.zeros(2), 1)
