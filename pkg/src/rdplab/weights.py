"""Robust residual weights w(r), influence functions, and the boundedness checker.

A weight function multiplies each measurement component's log-likelihood by
w(r_i), r_i = y_i - yhat_i.  Guidance built from weights-as-constants moves
each component by w(r) r / sigma_y^2; differentiating through the weight gives
the influence function

    psi(r) = (2 r w(r) + r^2 w'(r)) / (2 sigma_y^2),

the derivative of the induced loss rho(r) = w(r) r^2 / (2 sigma_y^2).  A
weight family keeps guidance bounded when |r w(r)| and |r^2 w'(r)| stay
bounded as |r| -> inf; ``check_robust_condition`` certifies that numerically
on a log grid (a heuristic certificate, not a proof).

Families
--------
Uniform        w = 1 (plain, non-robust baseline)
IMQ(c)         w = (1 + r^2/c^2)^(-1/2), sup |r w| = c
Huber(delta)   w = min(1, delta/|r|), one-sided derivative at |r| = delta
Mahalanobis    w_i = (1 + r_i^2/(scale_i c^2))^(-1/2), per-component scales
GlobalScale    one shared weight c_g/(eps_g + ||r||) for the whole vector;
               the scalar interface reads its argument as the residual norm.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "Uniform",
    "IMQ",
    "Huber",
    "Mahalanobis",
    "GlobalScale",
    "WeightFn",
    "weight",
    "weight_deriv",
    "psi",
    "residual_weights",
    "check_robust_condition",
    "RobustnessReport",
    "adaptive_c",
]


@dataclass(frozen=True)
class Uniform:
    def weight(self, r):
        return np.ones_like(np.asarray(r, dtype=float))

    def weight_deriv(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))


@dataclass(frozen=True)
class IMQ:
    c: float = 1.0

    def __post_init__(self) -> None:
        if not self.c > 0.0:
            raise ValueError("c must be positive")

    def weight(self, r, c=None):
        r = np.asarray(r, dtype=float)
        c = self.c if c is None else c
        return (1.0 + (r / c) ** 2) ** -0.5

    def weight_deriv(self, r, c=None):
        r = np.asarray(r, dtype=float)
        c = self.c if c is None else c
        return -(r / c**2) * (1.0 + (r / c) ** 2) ** -1.5


@dataclass(frozen=True)
class Huber:
    delta: float = 1.0

    def __post_init__(self) -> None:
        if not self.delta > 0.0:
            raise ValueError("delta must be positive")

    def weight(self, r, c=None):
        r = np.asarray(r, dtype=float)
        delta = self.delta if c is None else c
        return np.minimum(1.0, delta / np.maximum(np.abs(r), 1e-300))

    def weight_deriv(self, r, c=None):
        # outside the knee w = delta/|r|, so w' = -delta*sign(r)/r^2; the
        # boundary |r| = delta takes the outside one-sided value
        r = np.asarray(r, dtype=float)
        delta = self.delta if c is None else c
        outside = np.abs(r) >= delta
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(outside, -delta * np.sign(r) / np.maximum(r * r, 1e-300), 0.0)
        return d


@dataclass(frozen=True)
class Mahalanobis:
    """Per-component scales enter the denominator linearly: r^2/(scale_i c^2)."""

    c: float = 1.0
    scales: Union[float, np.ndarray] = 1.0

    def __post_init__(self) -> None:
        if not self.c > 0.0:
            raise ValueError("c must be positive")
        scales = np.asarray(self.scales, dtype=float)
        if np.any(scales <= 0.0):
            raise ValueError("scales must be positive")
        object.__setattr__(self, "scales", scales if scales.ndim else float(scales))

    def weight(self, r, c=None):
        r = np.asarray(r, dtype=float)
        c = self.c if c is None else c
        return (1.0 + r**2 / (np.asarray(self.scales) * np.asarray(c) ** 2)) ** -0.5

    def weight_deriv(self, r, c=None):
        r = np.asarray(r, dtype=float)
        c = self.c if c is None else c
        sc2 = np.asarray(self.scales) * np.asarray(c) ** 2
        return -(r / sc2) * (1.0 + r**2 / sc2) ** -1.5


@dataclass(frozen=True)
class GlobalScale:
    """Single shared weight c_g/(eps_g + ||r||); vector-level, not per-component."""

    c_g: float = 1.0
    eps_g: float = 1e-3

    def __post_init__(self) -> None:
        if not self.c_g > 0.0 or not self.eps_g > 0.0:
            raise ValueError("c_g and eps_g must be positive")

    def weight(self, r, c=None):
        # scalar view: the argument is the residual norm
        r = np.asarray(r, dtype=float)
        return self.c_g / (self.eps_g + np.abs(r))

    def weight_deriv(self, r, c=None):
        r = np.asarray(r, dtype=float)
        return -self.c_g * np.sign(r) / (self.eps_g + np.abs(r)) ** 2


WeightFn = Union[Uniform, IMQ, Huber, Mahalanobis, GlobalScale]

_SCALED = (IMQ, Huber, Mahalanobis)


def weight(wf: WeightFn, r):
    """w(r), elementwise."""
    return wf.weight(r)


def weight_deriv(wf: WeightFn, r):
    """dw/dr, elementwise (one-sided at kinks)."""
    return wf.weight_deriv(r)


def psi(wf: WeightFn, r, sigma_y: float):
    """Influence (2 r w + r^2 w') / (2 sigma_y^2); Uniform reduces to r/sigma^2."""
    if not sigma_y > 0.0:
        raise ValueError("sigma_y must be positive")
    r = np.asarray(r, dtype=float)
    return (2.0 * r * wf.weight(r) + r * r * wf.weight_deriv(r)) / (2.0 * sigma_y**2)


def residual_weights(wf: WeightFn | None, R: np.ndarray, c=None) -> np.ndarray:
    """Weights for a batch of residual rows R (n, m); the sampler-facing hook.

    ``c`` optionally overrides the family's scale parameter (scalar or (n, 1)
    per-chain array); GlobalScale ignores it and returns one shared weight per
    row, broadcast across components.
    """
    R = np.asarray(R, dtype=float)
    if wf is None or isinstance(wf, Uniform):
        return np.ones_like(R)
    if isinstance(wf, GlobalScale):
        norms = np.linalg.norm(R, axis=-1, keepdims=True)
        return np.broadcast_to(wf.c_g / (wf.eps_g + norms), R.shape).copy()
    return wf.weight(R, c=c)


@dataclass(frozen=True)
class RobustnessReport:
    sup_rw: float
    sup_r2wprime: float
    growth_rw: float
    growth_r2wprime: float
    verdict: str


def check_robust_condition(
    wf: WeightFn, r_max: float = 1e6, n_grid: int = 4001
) -> RobustnessReport:
    """Certify |r w(r)| and |r^2 w'(r)| bounded on a log grid up to r_max.

    Verdict is ``robust`` when both curves grow by a factor below 1.05 over
    the final decade, ``non_robust`` otherwise.  Heuristic: a certificate on
    the probed range, not a proof.
    """
    r_max = float(r_max)
    if r_max <= 0.0 or n_grid < 16:
        raise ValueError("need r_max > 0 and a reasonable grid size")
    grid = np.logspace(np.log10(r_max) - 9.0, np.log10(r_max), int(n_grid))
    rw = np.abs(grid * wf.weight(grid))
    r2wp = np.abs(grid * grid * wf.weight_deriv(grid))

    def growth(vals: np.ndarray) -> float:
        end = vals[-1]
        at_tenth = np.interp(np.log10(r_max) - 1.0, np.log10(grid), vals)
        if at_tenth == 0.0:
            return 1.0 if end == 0.0 else np.inf
        return float(end / at_tenth)

    g1, g2 = growth(rw), growth(r2wp)
    verdict = "robust" if (g1 < 1.05 and g2 < 1.05) else "non_robust"
    return RobustnessReport(
        sup_rw=float(rw.max()),
        sup_r2wprime=float(r2wp.max()),
        growth_rw=g1,
        growth_r2wprime=g2,
        verdict=verdict,
    )


def adaptive_c(abs_residuals: np.ndarray, q: float, c_min: float = 1e-8):
    """q-quantile of |r| with linear interpolation, floored at c_min.

    Batched: a 2-D input (n, m) returns one threshold per row, shape (n, 1),
    ready to broadcast against per-component residuals.
    """
    ar = np.asarray(abs_residuals, dtype=float)
    if ar.size == 0:
        raise ValueError("empty residual vector")
    if not 0.0 < q <= 1.0:
        raise ValueError("q must lie in (0, 1]")
    if not c_min > 0.0:
        raise ValueError("c_min must be positive")
    if ar.ndim == 1:
        return float(max(np.quantile(ar, q), c_min))
    if ar.ndim == 2:
        return np.maximum(np.quantile(ar, q, axis=1, keepdims=True), c_min)
    raise ValueError("residuals must be 1-D or 2-D")
