"""Gaussian-mixture priors with exact scores, denoisers, and posteriors.

This module is the oracle layer: every quantity a trained score network would
normally approximate is available here in closed form, so samplers can be
checked against exact answers.

Math conventions
----------------
A mixture has weights pi_k, means mu_k, covariances Sigma_k.  Under the VP
kernel x_t = sqrt(ab) x0 + sqrt(1-ab) eps with ab = alpha_bar_t, the diffused
marginal of a mixture is again a mixture with

    means sqrt(ab) mu_k,   covariances ab Sigma_k + (1-ab) I.

Scores are computed with log-space responsibilities:

    score(x) = sum_k resp_k(x) * (-Sigma_k^{-1} (x - mu_k)),
    hess(x)  = sum_k resp_k(x) * (-Sigma_k^{-1} + g_k g_k^T) - g g^T,

with g_k the per-component score and g the mixture score.  Tweedie's posterior
mean and its exact covariance are

    E[x0|x_t]   = (x_t + (1-ab) score_t(x_t)) / sqrt(ab),
    Cov(x0|x_t) = ((1-ab)/ab) (I + (1-ab) H_t(x_t)),

where H_t is the Hessian of the log diffused marginal.  The covariance formula
follows from differentiating the posterior mean (dE[x0|x_t]/dx_t =
sqrt(ab)/(1-ab) Cov); an alternative normalization of the Hessian term is in
circulation, and ``reconcile_covariance_convention`` selects the one agreeing
with exact Gaussian conditioning rather than assuming.

Covariance storage is diagonal-first: ``covs`` with shape (K, d) holds
per-component variances; shape (K, d, d) holds dense SPD matrices.  Conjugate
posterior updates densify, which is the expected escape hatch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import logsumexp

from .schedules import Schedule, make_linear_schedule

__all__ = [
    "GaussianMixture",
    "MixtureScore",
    "CallableScore",
    "log_density",
    "score",
    "hessian",
    "hessian_matvec",
    "marginal_at_t",
    "tweedie_denoise",
    "tweedie_posterior_cov",
    "posterior_linear",
    "posterior_x0_given_xt",
    "conditional_score",
    "sample",
    "reconcile_covariance_convention",
    "CovarianceReconciliation",
]

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GaussianMixture:
    """Finite Gaussian mixture with diagonal or dense covariances.

    Parameters
    ----------
    weights : ndarray, shape (K,)
        Nonnegative, summing to 1 within 1e-12 (renormalized exactly after
        validation).
    means : ndarray, shape (K, d)
    covs : ndarray, shape (K, d) or (K, d, d)
        Per-component variances (diagonal storage) or dense SPD matrices.
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    _chols: np.ndarray | None = field(default=None, repr=False, compare=False)
    _log_norms: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float).ravel()
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covs, dtype=float)
        k, d = means.shape
        if w.shape != (k,):
            raise ValueError("weights and means disagree on component count")
        if np.any(w < 0.0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")
        w = w / w.sum()
        if covs.shape == (k, d):
            if np.any(covs <= 0.0):
                raise ValueError("diagonal covariances must be strictly positive")
            log_dets = np.log(covs).sum(axis=1)
            chols = None
        elif covs.shape == (k, d, d):
            asym = np.abs(covs - covs.transpose(0, 2, 1)).max()
            scale = max(np.abs(covs).max(), 1.0)
            if asym > 1e-10 * scale:
                raise ValueError("covariance matrices must be symmetric")
            try:
                chols = np.stack([cholesky(c, lower=True) for c in covs])
            except np.linalg.LinAlgError as exc:
                raise ValueError("covariance not positive definite") from exc
            log_dets = 2.0 * np.log(
                np.stack([np.diag(L) for L in chols])
            ).sum(axis=1)
        else:
            raise ValueError("covs must have shape (K, d) or (K, d, d)")
        self.weights = w
        self.means = means
        self.covs = covs
        self._chols = chols
        self._log_norms = -0.5 * (log_dets + d * _LOG_2PI)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def is_diagonal(self) -> bool:
        return self.covs.ndim == 2

    @property
    def log_weights(self) -> np.ndarray:
        return np.log(self.weights)


def _as_batch(x: np.ndarray, d: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != d:
            raise ValueError(f"point has dimension {x.shape[0]}, mixture has {d}")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError("points must have shape (d,) or (n, d)")
    return x, False


def _component_solves(gm: GaussianMixture, dx: np.ndarray) -> np.ndarray:
    """Sigma_k^{-1} dx_k for dx of shape (n, K, d) -> same shape."""
    if gm.is_diagonal:
        return dx / gm.covs[None, :, :]
    out = np.empty_like(dx)
    for k in range(gm.n_components):
        out[:, k, :] = cho_solve((gm._chols[k], True), dx[:, k, :].T).T
    return out


def _log_components(gm: GaussianMixture, X: np.ndarray) -> np.ndarray:
    """Per-component log densities, shape (n, K)."""
    dx = X[:, None, :] - gm.means[None, :, :]
    if gm.is_diagonal:
        quad = (dx * dx / gm.covs[None, :, :]).sum(axis=2)
    else:
        quad = np.empty((X.shape[0], gm.n_components))
        for k in range(gm.n_components):
            z = solve_triangular(gm._chols[k], dx[:, k, :].T, lower=True)
            quad[:, k] = (z * z).sum(axis=0)
    return gm._log_norms[None, :] - 0.5 * quad


def log_density(gm: GaussianMixture, x: np.ndarray) -> np.ndarray | float:
    """log p(x); batched over a leading axis."""
    X, single = _as_batch(x, gm.dim)
    out = logsumexp(_log_components(gm, X) + gm.log_weights[None, :], axis=1)
    return float(out[0]) if single else out


def responsibilities(gm: GaussianMixture, x: np.ndarray) -> np.ndarray:
    """Posterior component probabilities at x, shape (n, K) or (K,)."""
    X, single = _as_batch(x, gm.dim)
    lp = _log_components(gm, X) + gm.log_weights[None, :]
    lp -= logsumexp(lp, axis=1, keepdims=True)
    r = np.exp(lp)
    return r[0] if single else r


def score(gm: GaussianMixture, x: np.ndarray) -> np.ndarray:
    """grad_x log p(x) via responsibility-weighted component scores."""
    X, single = _as_batch(x, gm.dim)
    dx = X[:, None, :] - gm.means[None, :, :]
    g_k = -_component_solves(gm, dx)
    r = responsibilities(gm, X)
    out = np.einsum("nk,nkd->nd", r, g_k)
    return out[0] if single else out


def hessian(gm: GaussianMixture, x: np.ndarray) -> np.ndarray:
    """Hessian of log p at a single point, shape (d, d)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("hessian takes a single point")
    X = x[None, :]
    dx = X[:, None, :] - gm.means[None, :, :]
    g_k = -_component_solves(gm, dx)[0]
    r = responsibilities(gm, x)
    g = r @ g_k
    h = -g[:, None] * g[None, :]
    for k in range(gm.n_components):
        if gm.is_diagonal:
            prec = np.diag(1.0 / gm.covs[k])
        else:
            prec = cho_solve((gm._chols[k], True), np.eye(gm.dim))
        h += r[k] * (-prec + np.outer(g_k[k], g_k[k]))
    return h


def hessian_matvec(gm: GaussianMixture, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """H(x_n) @ u_n batched, without materializing the Hessians."""
    X, single = _as_batch(x, gm.dim)
    U, _ = _as_batch(u, gm.dim)
    if U.shape != X.shape:
        raise ValueError("x and u shapes differ")
    dx = X[:, None, :] - gm.means[None, :, :]
    g_k = -_component_solves(gm, dx)
    r = responsibilities(gm, X)
    g = np.einsum("nk,nkd->nd", r, g_k)
    prec_u = _component_solves(gm, np.broadcast_to(U[:, None, :], dx.shape))
    gu = np.einsum("nkd,nd->nk", g_k, U)
    out = (
        np.einsum("nk,nkd->nd", r, -prec_u)
        + np.einsum("nk,nk,nkd->nd", r, gu, g_k)
        - g * np.einsum("nd,nd->n", g, U)[:, None]
    )
    return out[0] if single else out


def marginal_at_t(gm: GaussianMixture, sched: Schedule, t: int) -> GaussianMixture:
    """Diffused mixture at step t: means sqrt(ab) mu_k, covs ab Sigma_k + (1-ab) I."""
    ab = sched.alpha_bar(t)
    means = np.sqrt(ab) * gm.means
    if gm.is_diagonal:
        covs = ab * gm.covs + (1.0 - ab)
    else:
        covs = ab * gm.covs + (1.0 - ab) * np.eye(gm.dim)[None, :, :]
    return GaussianMixture(weights=gm.weights.copy(), means=means, covs=covs)


def tweedie_denoise(
    x_t: np.ndarray, score_val: np.ndarray, t: int, sched: Schedule
) -> np.ndarray:
    """Posterior-mean denoiser (x_t + (1-ab) * score) / sqrt(ab)."""
    x_t = np.asarray(x_t, dtype=float)
    score_val = np.asarray(score_val, dtype=float)
    if x_t.shape != score_val.shape:
        raise ValueError("x_t and score shapes differ")
    ab = sched.alpha_bar(t)
    return (x_t + (1.0 - ab) * score_val) / np.sqrt(ab)


@dataclass(frozen=True)
class CovarianceReconciliation:
    """Outcome of checking second-order denoiser conventions against conditioning."""

    selected: str
    max_rel_err: dict[str, float]
    n_probes: int


def _cov_candidates(ab: float, h: np.ndarray) -> dict[str, np.ndarray]:
    d = h.shape[0]
    eye = np.eye(d)
    return {
        # derived by differentiating the posterior mean; exact for any prior
        "matched": ((1.0 - ab) / ab) * (eye + (1.0 - ab) * h),
        # alternative normalization with the Hessian term unscaled
        "raw": (1.0 - ab) * (eye / ab + h),
    }


@lru_cache(maxsize=1)
def reconcile_covariance_convention() -> CovarianceReconciliation:
    """Select the second-order denoiser convention matching Gaussian conditioning.

    Probes single-Gaussian priors (where the exact conditional covariance has
    the independent closed form Sigma - ab Sigma S^{-1} Sigma with
    S = ab Sigma + (1-ab) I) at several noise levels away from ab = 1/2, where
    the two conventions coincide on the standard normal.
    """
    sched = make_probe_schedule()
    rng = np.random.default_rng(20240814)
    priors = [
        GaussianMixture(np.array([1.0]), np.zeros((1, 1)), np.ones((1, 1))),
        GaussianMixture(np.array([1.0]), np.array([[0.7]]), np.array([[2.3]])),
        GaussianMixture(
            np.array([1.0]), np.array([[1.0, -2.0]]), np.array([[0.5, 1.8]])
        ),
    ]
    ts = [2, 40, 110]
    errs = {"matched": 0.0, "raw": 0.0}
    n = 0
    for gm in priors:
        for t in ts:
            ab = sched.alpha_bar(t)
            sigma = gm.covs[0]
            s_t = ab * sigma + (1.0 - ab)
            exact = np.diag(sigma * (1.0 - ab) / s_t)
            x_t = rng.standard_normal(gm.dim)
            h = hessian(marginal_at_t(gm, sched, t), x_t)
            for name, cand in _cov_candidates(ab, h).items():
                rel = np.abs(cand - exact).max() / max(np.abs(exact).max(), 1e-300)
                errs[name] = max(errs[name], float(rel))
            n += 1
    selected = min(errs, key=errs.get)
    if errs[selected] > 1e-8:
        raise RuntimeError(
            f"no covariance convention matches conditioning: {errs}"
        )
    return CovarianceReconciliation(selected=selected, max_rel_err=errs, n_probes=n)


def make_probe_schedule() -> Schedule:
    """Short schedule used by the convention reconciliation (ab spans ~0.9..0.3)."""
    return make_linear_schedule(1e-3, 0.05, 120)


def tweedie_posterior_cov(
    gm: GaussianMixture,
    sched: Schedule,
    t: int,
    x_t: np.ndarray,
    convention: str = "auto",
) -> np.ndarray:
    """Exact denoiser covariance Cov(x0 | x_t) from the marginal Hessian.

    ``convention="auto"`` uses the one selected by
    :func:`reconcile_covariance_convention`.  A result that is not PSD (beyond
    eigenvalue jitter) indicates a convention mismatch and raises rather than
    being clamped; this operation is an oracle, silent repair would defeat it.
    """
    x_t = np.asarray(x_t, dtype=float)
    if convention == "auto":
        convention = reconcile_covariance_convention().selected
    ab = sched.alpha_bar(t)
    h = hessian(marginal_at_t(gm, sched, t), x_t)
    try:
        cov = _cov_candidates(ab, h)[convention]
    except KeyError:
        raise ValueError(f"unknown covariance convention {convention!r}") from None
    cov = 0.5 * (cov + cov.T)
    min_eig = float(np.linalg.eigvalsh(cov).min())
    scale = max(float(np.abs(cov).max()), 1e-300)
    if min_eig < -1e-10 * scale:
        raise ValueError(
            f"covariance not PSD under convention {convention!r} "
            f"(min eigenvalue {min_eig:.3e}); convention mismatch"
        )
    return cov


def _dense_covs(gm: GaussianMixture) -> np.ndarray:
    if gm.is_diagonal:
        return np.stack([np.diag(v) for v in gm.covs])
    return gm.covs


def _gauss_logpdf(y: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    L = cholesky(cov, lower=True)
    z = solve_triangular(L, y - mean, lower=True)
    log_det = 2.0 * np.log(np.diag(L)).sum()
    return float(-0.5 * (z @ z + log_det + y.size * _LOG_2PI))


def posterior_linear(
    gm: GaussianMixture, A: np.ndarray, sigma_y: float, y: np.ndarray
) -> GaussianMixture:
    """Exact posterior mixture under y = A x + N(0, sigma_y^2 I).

    Per-component conjugate Gaussian updates with evidence-reweighted mixture
    weights.  Output covariances are dense (updates densify diagonals).
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    sigma_y = float(sigma_y)
    if sigma_y <= 0.0:
        raise ValueError("sigma_y must be positive")
    if A.ndim != 2 or A.shape[1] != gm.dim:
        raise ValueError("A must have shape (d_y, d_x) matching the mixture")
    if y.shape[0] != A.shape[0]:
        raise ValueError("y length must match A's row count")
    d = gm.dim
    ata = A.T @ A / sigma_y**2
    aty = A.T @ y / sigma_y**2
    covs = _dense_covs(gm)
    post_means = np.empty_like(gm.means)
    post_covs = np.empty((gm.n_components, d, d))
    log_ev = np.empty(gm.n_components)
    eye_m = np.eye(A.shape[0])
    for k in range(gm.n_components):
        prec_k = np.linalg.inv(covs[k])
        lam = prec_k + ata
        L = cholesky(lam, lower=True)
        post_covs[k] = cho_solve((L, True), np.eye(d))
        post_means[k] = cho_solve((L, True), prec_k @ gm.means[k] + aty)
        s_k = A @ covs[k] @ A.T + sigma_y**2 * eye_m
        log_ev[k] = _gauss_logpdf(y, A @ gm.means[k], s_k)
    post_covs = 0.5 * (post_covs + post_covs.transpose(0, 2, 1))
    log_w = gm.log_weights + log_ev
    log_w -= logsumexp(log_w)
    return GaussianMixture(weights=np.exp(log_w), means=post_means, covs=post_covs)


def posterior_x0_given_xt(
    gm: GaussianMixture, sched: Schedule, t: int, x_t: np.ndarray
) -> GaussianMixture:
    """Exact mixture p(x0 | x_t) under the forward kernel at step t.

    Component k conditions the Gaussian pair (x0, x_t) directly:

        m_k = mu_k + sqrt(ab) Sigma_k S_k^{-1} (x_t - sqrt(ab) mu_k),
        C_k = Sigma_k - ab Sigma_k S_k^{-1} Sigma_k,    S_k = ab Sigma_k + (1-ab) I,

    with mixture weights equal to the responsibilities of x_t under the
    diffused marginal.  This is the independent oracle for Tweedie identities.
    """
    x_t = np.asarray(x_t, dtype=float)
    if x_t.shape != (gm.dim,):
        raise ValueError("x_t must be a single point of mixture dimension")
    ab = sched.alpha_bar(t)
    marg = marginal_at_t(gm, sched, t)
    w = responsibilities(marg, x_t)
    if gm.is_diagonal:
        s = ab * gm.covs + (1.0 - ab)
        gain = np.sqrt(ab) * gm.covs / s
        means = gm.means + gain * (x_t[None, :] - np.sqrt(ab) * gm.means)
        covs = gm.covs * (1.0 - ab) / s
    else:
        d = gm.dim
        means = np.empty_like(gm.means)
        covs = np.empty_like(gm.covs)
        for k in range(gm.n_components):
            s_k = ab * gm.covs[k] + (1.0 - ab) * np.eye(d)
            sol = np.linalg.solve(s_k, gm.covs[k])
            means[k] = gm.means[k] + np.sqrt(ab) * sol.T @ (
                x_t - np.sqrt(ab) * gm.means[k]
            )
            c = gm.covs[k] - ab * gm.covs[k] @ sol
            covs[k] = 0.5 * (c + c.T)
    return GaussianMixture(weights=w, means=means, covs=covs)


def conditional_score(
    gm: GaussianMixture,
    A: np.ndarray,
    sigma_y: float,
    y: np.ndarray,
    sched: Schedule,
    t: int,
    x_t: np.ndarray,
) -> np.ndarray:
    """Exact grad_{x_t} log p_t(x_t | y): score of the diffused posterior mixture."""
    post = posterior_linear(gm, A, sigma_y, y)
    return score(marginal_at_t(post, sched, t), x_t)


def sample(gm: GaussianMixture, n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. draws, shape (n, d)."""
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    comps = rng.choice(gm.n_components, size=n, p=gm.weights)
    out = np.empty((n, gm.dim))
    z = rng.standard_normal((n, gm.dim))
    for k in range(gm.n_components):
        idx = comps == k
        if not np.any(idx):
            continue
        if gm.is_diagonal:
            out[idx] = gm.means[k] + np.sqrt(gm.covs[k]) * z[idx]
        else:
            out[idx] = gm.means[k] + z[idx] @ gm._chols[k].T
    return out


class MixtureScore:
    """Analytic score source backed by a mixture and a schedule.

    Exposes the exact score of the diffused marginal and the Hessian needed
    for the exact denoiser Jacobian (I + (1-ab) H) / sqrt(ab).
    """

    has_hessian = True

    def __init__(self, gm: GaussianMixture, sched: Schedule):
        self.gm = gm
        self.sched = sched
        self._marginals: dict[int, GaussianMixture] = {}

    @property
    def dim(self) -> int:
        return self.gm.dim

    def _marginal(self, t: int) -> GaussianMixture:
        if t not in self._marginals:
            self._marginals[t] = marginal_at_t(self.gm, self.sched, t)
        return self._marginals[t]

    def score(self, x: np.ndarray, t: int) -> np.ndarray:
        return score(self._marginal(t), x)

    def hessian_matvec(self, x: np.ndarray, u: np.ndarray, t: int) -> np.ndarray:
        return hessian_matvec(self._marginal(t), x, u)


class CallableScore:
    """Score source wrapping an injected rule (x, t) -> score.

    Used to emulate approximate scores in tests; no Hessian is available, so
    samplers fall back to the identity denoiser-Jacobian surrogate unless a
    ``hessian_matvec_fn`` is supplied.
    """

    def __init__(self, fn, sched: Schedule, dim: int, hessian_matvec_fn=None):
        self.fn = fn
        self.sched = sched
        self.dim = int(dim)
        self._hmv = hessian_matvec_fn

    @property
    def has_hessian(self) -> bool:
        return self._hmv is not None

    def score(self, x: np.ndarray, t: int) -> np.ndarray:
        out = np.asarray(self.fn(np.asarray(x, dtype=float), t), dtype=float)
        if out.shape != np.shape(x):
            raise ValueError("score rule changed the state shape")
        return out

    def hessian_matvec(self, x: np.ndarray, u: np.ndarray, t: int) -> np.ndarray:
        if self._hmv is None:
            raise ValueError("no Hessian available for this score source")
        return np.asarray(self._hmv(x, u, t), dtype=float)
