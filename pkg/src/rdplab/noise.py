"""Measurement-noise schemes: Gaussian, calibrated Student-t, impulsive outliers.

Each scheme corrupts a clean measurement vector y* and reports which
coordinates were treated as outliers.  The mask exists for diagnostics only;
samplers never receive it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = ["GaussianNoise", "StudentTNoise", "ImpulsiveNoise", "NoiseScheme", "corrupt"]


@dataclass(frozen=True)
class GaussianNoise:
    sigma_y: float

    def __post_init__(self) -> None:
        if not self.sigma_y > 0.0:
            raise ValueError("sigma_y must be positive")


@dataclass(frozen=True)
class StudentTNoise:
    """Student-t noise rescaled so its standard deviation equals sigma_y.

    The scale is sigma_y * sqrt((nu-2)/nu), which requires nu > 2.
    """

    sigma_y: float
    nu: float

    def __post_init__(self) -> None:
        if not self.sigma_y > 0.0:
            raise ValueError("sigma_y must be positive")
        if not self.nu > 2.0:
            raise ValueError("nu must exceed 2 for the std calibration")

    @property
    def scale(self) -> float:
        return self.sigma_y * math.sqrt((self.nu - 2.0) / self.nu)


@dataclass(frozen=True)
class ImpulsiveNoise:
    """Gaussian base noise with a random ceil(fraction * d_y) subset scaled by
    ``multiplier``; with ``replace_range`` set, the subset's measurements are
    instead replaced by U(-replace_range, replace_range) draws.
    """

    sigma_y: float
    fraction: float
    multiplier: float
    replace_range: float | None = None

    def __post_init__(self) -> None:
        if not self.sigma_y > 0.0:
            raise ValueError("sigma_y must be positive")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must lie in [0, 1]")
        if not self.multiplier >= 1.0:
            raise ValueError("multiplier must be >= 1")
        if self.replace_range is not None and not self.replace_range > 0.0:
            raise ValueError("replace_range must be positive when set")


NoiseScheme = Union[GaussianNoise, StudentTNoise, ImpulsiveNoise]


def corrupt(
    y_star: np.ndarray, scheme, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Apply a noise scheme to clean measurements.

    Returns (y, outlier_mask); the mask is all zeros except for the impulsive
    subset.  Draw order is fixed per scheme so equal seeds give equal outputs,
    and an impulsive scheme with fraction 0 consumes exactly the draws of the
    Gaussian scheme.
    """
    y_star = np.asarray(y_star, dtype=float).ravel()
    d_y = y_star.size
    mask = np.zeros(d_y, dtype=int)
    if isinstance(scheme, GaussianNoise):
        return y_star + scheme.sigma_y * rng.standard_normal(d_y), mask
    if isinstance(scheme, StudentTNoise):
        return y_star + scheme.scale * rng.standard_t(scheme.nu, size=d_y), mask
    if isinstance(scheme, ImpulsiveNoise):
        noise = scheme.sigma_y * rng.standard_normal(d_y)
        k = math.ceil(scheme.fraction * d_y)
        if k > 0:
            idx = rng.choice(d_y, size=k, replace=False)
            mask[idx] = 1
            if scheme.replace_range is None:
                noise[idx] *= scheme.multiplier
                y = y_star + noise
            else:
                y = y_star + noise
                y[idx] = rng.uniform(-scheme.replace_range, scheme.replace_range, k)
        else:
            y = y_star + noise
        return y, mask
    raise TypeError(f"unknown noise scheme {type(scheme).__name__}")
