"""Guided reverse-diffusion posterior samplers: DPS, LGD, and PiGDM forms.

Each sampler runs the ancestral reverse chain with a guided score

    s_hat(x_t, t) = score(x_t, t) + tau_t * guidance(x_t, t),

where the guidance is the gradient of a weighted measurement log-likelihood
evaluated at the Tweedie denoised state x0_hat.  Robust weights w(r_i) are
computed from the current residuals and treated as constants of the step (the
full-derivative psi form is available behind ``differentiate_weights``).
Uniform weights (or ``weight_fn=None``) reduce every robust sampler to its
plain counterpart bit-for-bit, which is the plug-in identity the tests pin.

Guidance forms
--------------
DPS     J_x0hat^T J_F(x0hat)^T [w * r] / sigma^2
LGD     like DPS but the likelihood is smoothed over n_mc Gaussian
        perturbations of x0hat (scale rho_t^2 = kappa (1-ab)/ab) and combined
        by log-mean-exp; weights come from the mean residual.
PiGDM   J_x0hat^T A^T (r_t^2 A A^T + sigma^2 I)^{-1} [w * r] via the SVD of A;
        linear models only.

The denoiser Jacobian is exact for analytic mixture scores,
J = (I + (1-ab) H) / sqrt(ab); score sources without Hessians use the common
surrogate J = I / sqrt(ab) (``jacobian="identity"``).

Temperature rules: ``fixed`` (tau = value), ``residual``
(tau = value / (||r|| + eps), per chain), and ``variance_matched``
(tau = value * sigma^2 / (sigma^2 + v_t) with v_t the conditional denoiser
variance of a reference prior variance; exact conditional-score guidance in
the unit-variance conjugate case).

Chains and randomness
---------------------
Every chain owns a generator spawned from the master seed.  Per step the
draw order is: LGD smoothing perturbations (if any), then the ancestral step
noise; chain streams never interleave, so results are independent of worker
count and any chain can be reproduced in isolation.  A chain whose state goes
non-finite is frozen at its last finite state and reported as failed; the
run continues.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import weights as wmod
from .operators import ForwardModel, UnsupportedOperationError
from .schedules import Schedule, _reverse_update

__all__ = [
    "TemperatureRule",
    "SamplerConfig",
    "InverseProblem",
    "Trajectory",
    "RunResult",
    "rdp_guidance",
    "lgd_guidance",
    "pigdm_guidance",
    "sample_dps",
    "sample_lgd",
    "sample_pigdm",
    "run_chains",
]


@dataclass(frozen=True)
class TemperatureRule:
    """Guidance temperature schedule; ``value`` is tau (fixed) or zeta."""

    mode: str = "fixed"
    value: float = 1.0
    eps: float = 1e-8
    prior_var: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in ("fixed", "residual", "variance_matched"):
            raise ValueError(f"unknown temperature mode {self.mode!r}")
        if not self.value > 0.0:
            raise ValueError("temperature value must be positive")
        if not self.eps >= 0.0 or not self.prior_var > 0.0:
            raise ValueError("eps must be >= 0 and prior_var > 0")


@dataclass(frozen=True)
class SamplerConfig:
    method: str
    schedule: Schedule
    weight_fn: wmod.WeightFn | None = None
    temperature: TemperatureRule = field(default_factory=TemperatureRule)
    adaptive_q: float | None = None
    c_min: float = 1e-8
    jacobian: str = "exact"
    differentiate_weights: bool = False
    deterministic_last_step: bool = True
    lgd_n_mc: int = 10
    lgd_kappa: float = 1.0
    pigdm_r2: str = "snr"
    seed: int = 0
    record_trajectory: bool = False
    trajectory_stride: int = 1

    def __post_init__(self) -> None:
        if self.method not in ("dps", "lgd", "pigdm"):
            raise ValueError(f"unknown sampler method {self.method!r}")
        if self.jacobian not in ("exact", "identity"):
            raise ValueError("jacobian must be 'exact' or 'identity'")
        if self.adaptive_q is not None and not 0.0 < self.adaptive_q <= 1.0:
            raise ValueError("adaptive_q must lie in (0, 1]")
        if self.lgd_n_mc < 1:
            raise ValueError("lgd_n_mc must be >= 1")
        if self.lgd_kappa < 0.0:
            raise ValueError("lgd_kappa must be >= 0")
        if self.pigdm_r2 not in ("snr", "sigma"):
            raise ValueError("pigdm_r2 must be 'snr' or 'sigma'")
        if self.differentiate_weights and isinstance(
            self.weight_fn, wmod.GlobalScale
        ):
            raise ValueError("psi-form guidance is per-component; GlobalScale is not")
        if self.trajectory_stride < 1:
            raise ValueError("trajectory_stride must be >= 1")


@dataclass(frozen=True)
class InverseProblem:
    model: ForwardModel
    y: np.ndarray
    sigma_y: float

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float).ravel()
        if y.shape[0] != self.model.d_y:
            raise ValueError("measurement length does not match the model")
        if not self.sigma_y > 0.0:
            raise ValueError("sigma_y must be positive")
        object.__setattr__(self, "y", y)


@dataclass
class Trajectory:
    """Per-step records at the configured stride (heavier than samples)."""

    ts: list = field(default_factory=list)
    x_t: list = field(default_factory=list)
    x0_hat: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    guidance_norm: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)


@dataclass
class RunResult:
    samples: np.ndarray
    failures: list
    trajectory: Trajectory | None
    master_seed: int
    n_chains: int


def _resolve_sched(score_src, sched: Schedule | None) -> Schedule:
    own = getattr(score_src, "sched", None)
    if sched is None:
        if own is None:
            raise ValueError("no schedule available")
        return own
    if own is not None and own is not sched and not np.array_equal(
        own.betas, sched.betas
    ):
        raise ValueError("score source and config disagree on the schedule")
    return sched


def _denoiser_jacobian_t(score_src, x, g0, t, ab, jacobian):
    """J_x0hat^T g0; J is symmetric for analytic scores."""
    if jacobian == "exact":
        if not getattr(score_src, "has_hessian", False):
            raise ValueError(
                "exact denoiser Jacobian needs a score Hessian; "
                "use jacobian='identity' for injected scores"
            )
        return (g0 + (1.0 - ab) * score_src.hessian_matvec(x, g0, t)) / np.sqrt(ab)
    return g0 / np.sqrt(ab)


def _scale_override(cfg_q, c_min, wf, R):
    if cfg_q is None or wf is None or isinstance(wf, (wmod.Uniform, wmod.GlobalScale)):
        return None
    return wmod.adaptive_c(np.abs(R), cfg_q, c_min)


def _influence(wf, R, sigma_y, c, differentiate):
    """Per-component residual influence entering the vjp."""
    w = wmod.residual_weights(wf, R, c=c)
    if not differentiate or wf is None or isinstance(wf, wmod.Uniform):
        return w * R / sigma_y**2, w
    dw = wf.weight_deriv(R, c=c)
    return (2.0 * R * w + R * R * dw) / (2.0 * sigma_y**2), w


def _dps_guidance_batch(
    X, t, score_src, model, y, wf, sigma_y, sched, *,
    adaptive_q, c_min, jacobian, differentiate_weights, score_val=None,
):
    ab = sched.alpha_bar(t)
    s = score_src.score(X, t) if score_val is None else score_val
    x0 = (X + (1.0 - ab) * s) / np.sqrt(ab)
    r = y[None, :] - model.apply(x0)
    c = _scale_override(adaptive_q, c_min, wf, r)
    infl, w = _influence(wf, r, sigma_y, c, differentiate_weights)
    g0 = model.vjp(x0, infl)
    g = _denoiser_jacobian_t(score_src, X, g0, t, ab, jacobian)
    return g, r, w, s, x0


def rdp_guidance(
    x_t,
    t,
    score_src,
    model,
    y,
    wf,
    sigma_y,
    sched=None,
    *,
    adaptive_q=None,
    c_min=1e-8,
    jacobian="exact",
    differentiate_weights=False,
):
    """Weighted-likelihood guidance at (x_t, t): grad of sum_i w_i log N(y_i; yhat_i, sigma^2).

    Returns (guidance, residuals, weights).  Batched over a leading chain
    axis; weights are treated as constants of the step unless
    ``differentiate_weights`` asks for the psi form.
    """
    sched = _resolve_sched(score_src, sched)
    X = np.asarray(x_t, dtype=float)
    single = X.ndim == 1
    Xb = X[None, :] if single else X
    y = np.asarray(y, dtype=float).ravel()
    g, r, w, _, _ = _dps_guidance_batch(
        Xb, t, score_src, model, y, wf, sigma_y, sched,
        adaptive_q=adaptive_q, c_min=c_min, jacobian=jacobian,
        differentiate_weights=differentiate_weights,
    )
    if not np.all(np.isfinite(r)):
        raise FloatingPointError("non-finite residuals in guidance")
    if single:
        return g[0], r[0], w[0]
    return g, r, w


def _lgd_guidance_batch(
    X, t, score_src, model, y, wf, sigma_y, sched, xi, kappa, *,
    adaptive_q, c_min, jacobian, differentiate_weights, score_val=None,
):
    ab = sched.alpha_bar(t)
    s = score_src.score(X, t) if score_val is None else score_val
    x0 = (X + (1.0 - ab) * s) / np.sqrt(ab)
    n, d = x0.shape
    n_mc = xi.shape[1]
    rho = np.sqrt(kappa * (1.0 - ab) / ab)
    x0j = x0[:, None, :] + rho * xi
    yj = model.apply(x0j.reshape(n * n_mc, d)).reshape(n, n_mc, model.d_y)
    rj = y[None, None, :] - yj
    rbar = rj.mean(axis=1)
    c = _scale_override(adaptive_q, c_min, wf, rbar)
    w = wmod.residual_weights(wf, rbar, c=c)
    # log-mean-exp over the smoothing draws; constants shared across draws cancel
    lj = -0.5 * np.einsum("nm,njm->nj", w, rj * rj) / sigma_y**2
    lmax = lj.max(axis=1, keepdims=True)
    softmax = np.exp(lj - lmax)
    softmax /= softmax.sum(axis=1, keepdims=True)
    lme = (lmax[:, 0] + np.log(np.exp(lj - lmax).mean(axis=1)))
    if differentiate_weights and wf is not None and not isinstance(wf, wmod.Uniform):
        dw = wf.weight_deriv(rbar, c=c)
        inflj = (2.0 * rj * w[:, None, :] + rj * rj * dw[:, None, :]) / (
            2.0 * sigma_y**2
        )
    else:
        inflj = w[:, None, :] * rj / sigma_y**2
    gj = model.vjp(x0j.reshape(n * n_mc, d), inflj.reshape(n * n_mc, model.d_y))
    g0 = np.einsum("nj,njd->nd", softmax, gj.reshape(n, n_mc, d))
    g = _denoiser_jacobian_t(score_src, X, g0, t, ab, jacobian)
    terms = {"lme": lme, "mean_log": lj.mean(axis=1)}
    return g, rbar, w, s, x0, terms


def lgd_guidance(
    x_t,
    t,
    score_src,
    model,
    y,
    wf,
    sigma_y,
    sched=None,
    *,
    xi=None,
    n_mc=10,
    kappa=1.0,
    rng=None,
    adaptive_q=None,
    c_min=1e-8,
    jacobian="exact",
    differentiate_weights=False,
    return_terms=False,
):
    """Smoothed-likelihood guidance; pass ``xi`` (n, n_mc, d) or an rng."""
    sched = _resolve_sched(score_src, sched)
    X = np.asarray(x_t, dtype=float)
    single = X.ndim == 1
    Xb = X[None, :] if single else X
    y = np.asarray(y, dtype=float).ravel()
    if xi is None:
        if rng is None:
            raise ValueError("provide xi draws or an rng")
        xi = rng.standard_normal((Xb.shape[0], int(n_mc), Xb.shape[1]))
    xi = np.asarray(xi, dtype=float)
    g, rbar, w, _, _, terms = _lgd_guidance_batch(
        Xb, t, score_src, model, y, wf, sigma_y, sched, xi, kappa,
        adaptive_q=adaptive_q, c_min=c_min, jacobian=jacobian,
        differentiate_weights=differentiate_weights,
    )
    out = (g[0], rbar[0], w[0]) if single else (g, rbar, w)
    if return_terms:
        return (*out, {k: (v[0] if single else v) for k, v in terms.items()})
    return out


def _pigdm_r2(mode: str, ab: float) -> float:
    sigma_t2 = (1.0 - ab) / ab
    if mode == "snr":
        return sigma_t2 / (1.0 + sigma_t2)
    return sigma_t2


def _pigdm_guidance_batch(
    X, t, score_src, model, y, wf, sigma_y, sched, r2_mode, *,
    adaptive_q, c_min, jacobian, score_val=None,
):
    if not model.is_linear:
        raise UnsupportedOperationError("spectral guidance requires a linear model")
    ab = sched.alpha_bar(t)
    s = score_src.score(X, t) if score_val is None else score_val
    x0 = (X + (1.0 - ab) * s) / np.sqrt(ab)
    r = y[None, :] - model.apply(x0)
    c = _scale_override(adaptive_q, c_min, wf, r)
    w = wmod.residual_weights(wf, r, c=c)
    rw = w * r
    u_mat, svals, vt = model.svd()
    r2 = _pigdm_r2(r2_mode, ab)
    spec = (rw @ u_mat) / (r2 * svals**2 + sigma_y**2)
    g0 = (spec * svals) @ vt
    g = _denoiser_jacobian_t(score_src, X, g0, t, ab, jacobian)
    return g, r, w, s, x0


def pigdm_guidance(
    x_t,
    t,
    score_src,
    model,
    y,
    wf,
    sigma_y,
    sched=None,
    *,
    r2_mode="snr",
    adaptive_q=None,
    c_min=1e-8,
    jacobian="exact",
):
    """Spectral-domain guidance with robust weights applied to the residual."""
    sched = _resolve_sched(score_src, sched)
    X = np.asarray(x_t, dtype=float)
    single = X.ndim == 1
    Xb = X[None, :] if single else X
    y = np.asarray(y, dtype=float).ravel()
    g, r, w, _, _ = _pigdm_guidance_batch(
        Xb, t, score_src, model, y, wf, sigma_y, sched, r2_mode,
        adaptive_q=adaptive_q, c_min=c_min, jacobian=jacobian,
    )
    if single:
        return g[0], r[0], w[0]
    return g, r, w


def _temperature(rule: TemperatureRule, t, sched, sigma_y, residuals):
    if rule.mode == "fixed":
        return rule.value
    if rule.mode == "residual":
        norms = np.linalg.norm(residuals, axis=-1, keepdims=True)
        return rule.value / (norms + rule.eps)
    ab = sched.alpha_bar(t)
    pv = rule.prior_var
    v_t = pv * (1.0 - ab) / (ab * pv + (1.0 - ab))
    return rule.value * sigma_y**2 / (sigma_y**2 + v_t)


def _simulate(
    problem: InverseProblem,
    score_src,
    cfg: SamplerConfig,
    rngs: list[np.random.Generator],
    chain_offset: int = 0,
):
    sched = _resolve_sched(score_src, cfg.schedule)
    model, y, sigma_y = problem.model, problem.y, problem.sigma_y
    n = len(rngs)
    d = model.d_x
    x = np.stack([rng.standard_normal(d) for rng in rngs])
    alive = np.ones(n, dtype=bool)
    failures: list[tuple[int, str]] = []
    traj = Trajectory() if cfg.record_trajectory else None
    kw = dict(
        adaptive_q=cfg.adaptive_q,
        c_min=cfg.c_min,
        jacobian=cfg.jacobian,
    )

    def scatter(rows, vals):
        # re-inflate an alive-rows array to the full chain count, NaN elsewhere
        vals = np.asarray(vals, dtype=float)
        if vals.ndim == 0:
            return vals
        out = np.full((n,) + vals.shape[1:], np.nan)
        out[rows] = vals
        return out

    # Diverging chains are dropped from the batch before their state overflows
    # inside the score/Hessian computations; a finite-but-huge state is as
    # dead as a NaN one.  Rows on their way out legitimately produce inf/nan
    # arithmetic for one step, so those numpy warnings are noise here.
    big = 1e100
    with np.errstate(invalid="ignore", over="ignore"):
        for t in range(sched.n_steps, 0, -1):
            idx = np.nonzero(alive)[0]
            if idx.size == 0:
                break
            xa = x[idx]
            if cfg.method == "dps":
                g, r, w, s, x0 = _dps_guidance_batch(
                    xa, t, score_src, model, y, cfg.weight_fn, sigma_y, sched,
                    differentiate_weights=cfg.differentiate_weights, **kw,
                )
                extras = None
            elif cfg.method == "lgd":
                xi = np.stack(
                    [rngs[i].standard_normal((cfg.lgd_n_mc, d)) for i in idx]
                )
                g, r, w, s, x0, extras = _lgd_guidance_batch(
                    xa, t, score_src, model, y, cfg.weight_fn, sigma_y, sched,
                    xi, cfg.lgd_kappa,
                    differentiate_weights=cfg.differentiate_weights, **kw,
                )
            else:
                g, r, w, s, x0 = _pigdm_guidance_batch(
                    xa, t, score_src, model, y, cfg.weight_fn, sigma_y, sched,
                    cfg.pigdm_r2, **kw,
                )
                extras = None
            tau = _temperature(cfg.temperature, t, sched, sigma_y, r)
            s_hat = s + tau * g
            if t > 1 or not cfg.deterministic_last_step:
                z = np.stack([rngs[i].standard_normal(d) for i in idx])
            else:
                z = 0.0
            x_new = _reverse_update(xa, s_hat, sched.beta(t), z)
            ok = np.isfinite(x_new).all(axis=1) & (
                np.abs(x_new).max(axis=1) < big
            )
            for j in np.nonzero(~ok)[0]:
                failures.append(
                    (chain_offset + int(idx[j]), f"non-finite state at step t={t}")
                )
            x[idx[ok]] = x_new[ok]
            x[idx[~ok]] = np.nan
            alive[idx[~ok]] = False
            if traj is not None and (sched.n_steps - t) % cfg.trajectory_stride == 0:
                traj.ts.append(t)
                traj.x_t.append(x.copy())
                traj.x0_hat.append(scatter(idx, x0))
                traj.residuals.append(scatter(idx, r))
                traj.weights.append(scatter(idx, w))
                traj.guidance_norm.append(scatter(idx, np.linalg.norm(g, axis=1)))
                if extras is not None:
                    for key, val in extras.items():
                        traj.extras.setdefault(key, []).append(scatter(idx, val))
    return x, failures, traj


def _worker_count(n_workers: int | None, n_chains: int) -> int:
    if n_workers is None:
        env = os.environ.get("RDP_LAB_THREADS")
        if env is not None:
            n_workers = max(1, int(env))
        else:
            n_workers = min(4, os.cpu_count() or 1)
    return max(1, min(int(n_workers), n_chains))


def run_chains(
    cfg: SamplerConfig,
    problem: InverseProblem,
    score_src,
    n_chains: int,
    master_seed: int | None = None,
    n_workers: int | None = None,
) -> RunResult:
    """Run n_chains independent guided chains with derived seeds.

    Chain i draws from ``default_rng(SeedSequence(master_seed).spawn(n)[i])``;
    the per-chain stream is consumed in a fixed order (initial state, then per
    step: smoothing draws if LGD, then step noise), so outputs do not depend
    on the worker count and any chain can be reproduced alone.  Failed chains
    (non-finite states) are recorded and the run continues.  Worker count is
    capped by ``RDP_LAB_THREADS`` when set.
    """
    n_chains = int(n_chains)
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    seed = cfg.seed if master_seed is None else int(master_seed)
    children = np.random.SeedSequence(seed).spawn(n_chains)
    rngs = [np.random.default_rng(child) for child in children]
    n_workers = _worker_count(n_workers, n_chains)
    if cfg.record_trajectory:
        n_workers = 1  # trajectory assembly is single-owner
    if n_workers == 1:
        samples, failures, traj = _simulate(problem, score_src, cfg, rngs)
    else:
        bounds = np.linspace(0, n_chains, n_workers + 1).astype(int)
        blocks = [
            (int(lo), rngs[lo:hi]) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo
        ]
        parts: list = [None] * len(blocks)

        def work(i):
            lo, block_rngs = blocks[i]
            try:
                return _simulate(problem, score_src, cfg, block_rngs, chain_offset=lo)
            except Exception as exc:  # isolate a poisoned block, keep the run
                d = problem.model.d_x
                dead = np.full((len(block_rngs), d), np.nan)
                fails = [
                    (lo + j, f"{type(exc).__name__}: {exc}")
                    for j in range(len(block_rngs))
                ]
                return dead, fails, None

        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            for i, part in enumerate(pool.map(work, range(len(blocks)))):
                parts[i] = part
        samples = np.vstack([p[0] for p in parts])
        failures = [f for p in parts for f in p[1]]
        traj = None
    return RunResult(
        samples=samples,
        failures=failures,
        trajectory=traj,
        master_seed=seed,
        n_chains=n_chains,
    )


def _sample_with(method: str, cfg: SamplerConfig, score_src, model, y, sigma_y,
                 n_chains: int, master_seed: int | None, n_workers: int | None):
    if cfg.method != method:
        raise ValueError(f"config method is {cfg.method!r}, expected {method!r}")
    problem = InverseProblem(model=model, y=np.asarray(y, dtype=float), sigma_y=sigma_y)
    res = run_chains(cfg, problem, score_src, n_chains, master_seed, n_workers)
    return res.samples, res.trajectory


def sample_dps(cfg, score_src, model, y, sigma_y, n_chains=1,
               master_seed=None, n_workers=None):
    """Guided ancestral sampling with (robust) DPS guidance."""
    return _sample_with("dps", cfg, score_src, model, y, sigma_y,
                        n_chains, master_seed, n_workers)


def sample_lgd(cfg, score_src, model, y, sigma_y, n_chains=1,
               master_seed=None, n_workers=None):
    """Guided sampling with the Monte-Carlo smoothed likelihood surrogate."""
    return _sample_with("lgd", cfg, score_src, model, y, sigma_y,
                        n_chains, master_seed, n_workers)


def sample_pigdm(cfg, score_src, model, y, sigma_y, n_chains=1,
                 master_seed=None, n_workers=None):
    """Guided sampling with spectral-domain (pseudoinverse) guidance."""
    return _sample_with("pigdm", cfg, score_src, model, y, sigma_y,
                        n_chains, master_seed, n_workers)


def plain_config(cfg: SamplerConfig) -> SamplerConfig:
    """The unweighted counterpart of a robust config (plug-in identity)."""
    return replace(cfg, weight_fn=None, adaptive_q=None)
