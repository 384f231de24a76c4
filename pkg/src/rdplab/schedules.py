"""Variance-preserving diffusion schedules and the discrete reverse step.

Conventions
-----------
Discrete time runs t = 1..T (1-based).  A schedule stores per-step noise
rates beta_t in (0,1) and the cumulative products

    alpha_bar_t = prod_{i<=t} (1 - beta_i),        alpha_bar_0 = 1,

so the forward perturbation kernel is

    p(x_t | x_0) = N(sqrt(alpha_bar_t) x_0, (1 - alpha_bar_t) I).

The reverse-time ancestral update used by every sampler is

    x_{t-1} = x_t + beta_t (x_t / 2 + s_hat) + sqrt(beta_t) z,

with z ~ N(0, I) for t > 1 and z = 0 at the final step (configurable via
``deterministic_last_step``).  State vectors are plain float64 ndarrays; a
leading axis, when present, indexes independent chains.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Schedule",
    "make_linear_schedule",
    "forward_perturb",
    "ancestral_step",
]


@dataclass(frozen=True)
class Schedule:
    """Discrete VP noise schedule.

    Parameters
    ----------
    betas : ndarray, shape (n_steps,)
        Per-step noise rates, each in (0, 1).
    alpha_bars : ndarray, shape (n_steps,)
        Cumulative products prod_{i<=t}(1 - beta_i).  Must satisfy the
        recurrence alpha_bars[t] = (1 - betas[t]) * alpha_bars[t-1] exactly
        as stored (bitwise); use :func:`make_linear_schedule` or build with
        ``np.cumprod`` to guarantee this.
    """

    betas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, dtype=float)
        abars = np.asarray(self.alpha_bars, dtype=float)
        if betas.ndim != 1 or betas.size == 0:
            raise ValueError("betas must be a nonempty 1-D array")
        if abars.shape != betas.shape:
            raise ValueError("alpha_bars must match betas in shape")
        if not np.all(np.isfinite(betas)):
            raise ValueError("betas must be finite")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("every beta_t must lie in (0, 1)")
        # alpha_bar recurrence must hold exactly as stored, not within tolerance
        if not np.array_equal(abars, np.cumprod(1.0 - betas)):
            raise ValueError("alpha_bars violate the cumulative-product recurrence")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", abars)

    @property
    def n_steps(self) -> int:
        return int(self.betas.size)

    def _check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.n_steps:
            raise ValueError(f"step index t={t} outside 1..{self.n_steps}")
        return t

    def beta(self, t: int) -> float:
        return float(self.betas[self._check_t(t) - 1])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self._check_t(t) - 1])

    def alpha_bar_prev(self, t: int) -> float:
        """alpha_bar_{t-1}, with alpha_bar_0 = 1."""
        t = self._check_t(t)
        return 1.0 if t == 1 else float(self.alpha_bars[t - 2])


def make_linear_schedule(beta_min: float, beta_max: float, n_steps: int) -> Schedule:
    """Linearly interpolated beta schedule from beta_min to beta_max.

    The conventional discretization uses beta_min=1e-4, beta_max=0.02 over
    1000 steps; desk-scale runs shorten n_steps and keep the endpoints.
    """
    beta_min = float(beta_min)
    beta_max = float(beta_max)
    n_steps = int(n_steps)
    if not (np.isfinite(beta_min) and np.isfinite(beta_max)):
        raise ValueError("beta endpoints must be finite")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ValueError("require 0 < beta_min <= beta_max < 1")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    betas = np.linspace(beta_min, beta_max, n_steps)
    return Schedule(betas=betas, alpha_bars=np.cumprod(1.0 - betas))


def forward_perturb(
    x0: np.ndarray, t: int, sched: Schedule, rng: np.random.Generator
) -> np.ndarray:
    """Draw x_t ~ N(sqrt(alpha_bar_t) x0, (1 - alpha_bar_t) I)."""
    x0 = np.asarray(x0, dtype=float)
    ab = sched.alpha_bar(t)
    z = rng.standard_normal(x0.shape)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * z


def _reverse_update(
    x_t: np.ndarray, s_hat: np.ndarray, beta: float, noise: np.ndarray | float
) -> np.ndarray:
    # shared by the public ancestral_step and the batched sampler loop
    return x_t + beta * (0.5 * x_t + s_hat) + np.sqrt(beta) * noise


def ancestral_step(
    x_t: np.ndarray,
    s_hat: np.ndarray,
    t: int,
    sched: Schedule,
    rng: np.random.Generator | None = None,
    *,
    deterministic_last_step: bool = True,
) -> np.ndarray:
    """One reverse step x_t -> x_{t-1} given the (guided) score estimate.

    For t > 1 the update injects sqrt(beta_t) z with z from ``rng``; at t = 1
    no noise is injected unless ``deterministic_last_step`` is switched off.
    """
    x_t = np.asarray(x_t, dtype=float)
    s_hat = np.asarray(s_hat, dtype=float)
    if x_t.shape != s_hat.shape:
        raise ValueError("x_t and s_hat shapes differ")
    if not np.all(np.isfinite(s_hat)):
        raise ValueError("non-finite score estimate")
    t = sched._check_t(t)
    needs_noise = t > 1 or not deterministic_last_step
    if needs_noise:
        if rng is None:
            raise ValueError("rng required when the step injects noise")
        noise = rng.standard_normal(x_t.shape)
    else:
        noise = 0.0
    return _reverse_update(x_t, s_hat, sched.beta(t), noise)
