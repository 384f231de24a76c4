"""Reconstruction and distribution metrics used by the tests and the runner."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mixtures

__all__ = [
    "psnr",
    "ssim",
    "nmae",
    "sliced_w2",
    "kl_mc",
    "kl_mc_samples",
    "MetricReport",
    "aggregate",
]


def psnr(x: np.ndarray, ref: np.ndarray, data_range: float) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for an exact match.

    ``data_range`` is required: reconstructions routinely leave the nominal
    range of the reference, so inferring it from the inputs is a silent bug.
    Adding one constant to both inputs leaves psnr unchanged only because
    data_range is held fixed.
    """
    x = np.asarray(x, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if x.shape != ref.shape:
        raise ValueError("shape mismatch")
    if not data_range > 0.0:
        raise ValueError("data_range must be positive")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(data_range**2 / mse))


def _gaussian_window(size: int = 7, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-0.5 * ((np.arange(size) - half) / sigma) ** 2)
    win = np.outer(g, g)
    return win / win.sum()


def _windowed(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    # 'valid' windowed means via a strided view; images here are desk-scale
    k = win.shape[0]
    h, w = img.shape
    if h < k or w < k:
        raise ValueError(f"image smaller than the {k}x{k} window")
    shape = (h - k + 1, w - k + 1, k, k)
    strides = img.strides + img.strides
    patches = np.lib.stride_tricks.as_strided(img, shape=shape, strides=strides)
    return np.einsum("ijkl,kl->ij", patches, win)


def ssim(
    x: np.ndarray,
    ref: np.ndarray,
    data_range: float = 1.0,
    grid_shape: tuple[int, int] | None = None,
    k1: float = 0.01,
    k2: float = 0.03,
) -> float:
    """Mean structural similarity over valid 7x7 Gaussian windows (sigma 1.5).

    Flat vectors are reshaped to ``grid_shape``; 2-d inputs are used as-is.
    """
    x = np.asarray(x, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if x.shape != ref.shape:
        raise ValueError("shape mismatch")
    if x.ndim == 1:
        if grid_shape is None:
            raise ValueError("flat input needs grid_shape")
        x = x.reshape(grid_shape)
        ref = ref.reshape(grid_shape)
    if x.ndim != 2:
        raise ValueError("ssim expects 2-d images")
    if not data_range > 0.0:
        raise ValueError("data_range must be positive")
    x = np.ascontiguousarray(x)
    ref = np.ascontiguousarray(ref)
    win = _gaussian_window()
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_x = _windowed(x, win)
    mu_r = _windowed(ref, win)
    xx = _windowed(x * x, win) - mu_x**2
    rr = _windowed(ref * ref, win) - mu_r**2
    xr = _windowed(x * ref, win) - mu_x * mu_r
    num = (2.0 * mu_x * mu_r + c1) * (2.0 * xr + c2)
    den = (mu_x**2 + mu_r**2 + c1) * (xx + rr + c2)
    return float(np.mean(num / den))


def nmae(x: np.ndarray, ref: np.ndarray) -> float:
    """L1 error normalised by the L1 mass of the reference."""
    x = np.asarray(x, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if x.shape != ref.shape:
        raise ValueError("shape mismatch")
    denom = float(np.abs(ref).sum())
    if denom == 0.0:
        raise ValueError("reference has zero L1 mass")
    return float(np.abs(x - ref).sum() / denom)


def sliced_w2(
    a: np.ndarray,
    b: np.ndarray,
    n_proj: int = 128,
    rng: np.random.Generator | int | None = 0,
) -> float:
    """Sliced 2-Wasserstein distance between two sample clouds.

    Projects both clouds onto ``n_proj`` random unit directions, pairs the
    1-d empirical quantile functions on a common grid, and averages the
    squared transport cost over directions.  Deterministic for a fixed seed;
    symmetric; zero on identical clouds.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError("dimension mismatch")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("empty sample cloud")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    d = a.shape[1]
    dirs = rng.standard_normal((n_proj, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = a @ dirs.T
    pb = b @ dirs.T
    k = max(a.shape[0], b.shape[0])
    qs = (np.arange(k) + 0.5) / k
    qa = np.quantile(pa, qs, axis=0) if a.shape[0] != k else np.sort(pa, axis=0)
    qb = np.quantile(pb, qs, axis=0) if b.shape[0] != k else np.sort(pb, axis=0)
    return float(np.sqrt(np.mean((qa - qb) ** 2)))


def kl_mc_samples(log_p, log_q, samples: np.ndarray) -> tuple[float, float]:
    """Monte-Carlo KL(p || q) from samples already drawn from p.

    ``log_p`` and ``log_q`` are callables returning per-sample log densities.
    Returns (estimate, standard error).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    lp = np.asarray(log_p(samples), dtype=float).ravel()
    lq = np.asarray(log_q(samples), dtype=float).ravel()
    if lp.shape != lq.shape or lp.shape[0] != samples.shape[0]:
        raise ValueError("log density shape mismatch")
    gaps = lp - lq
    n = gaps.shape[0]
    est = float(np.mean(gaps))
    se = float(np.std(gaps, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return est, se


def kl_mc(
    gm_p: "mixtures.GaussianMixture",
    gm_q: "mixtures.GaussianMixture",
    n: int,
    rng: np.random.Generator | int | None = 0,
) -> tuple[float, float]:
    """Monte-Carlo KL(p || q) between two mixtures; (estimate, standard error)."""
    if gm_p.dim != gm_q.dim:
        raise ValueError("dimension mismatch")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    draws = mixtures.sample(gm_p, int(n), rng)
    return kl_mc_samples(
        lambda z: mixtures.log_density(gm_p, z),
        lambda z: mixtures.log_density(gm_q, z),
        draws,
    )


def aggregate(values) -> dict:
    """Median and interquartile range of a per-seed metric."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no values to aggregate")
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    return {"median": float(med), "iqr": float(q3 - q1), "n": int(v.size)}


@dataclass
class MetricReport:
    """Per-seed metric arrays plus median/IQR aggregates."""

    per_seed: dict = field(default_factory=dict)

    def add(self, name: str, value: float) -> None:
        self.per_seed.setdefault(name, []).append(float(value))

    def summary(self) -> dict:
        return {name: aggregate(vals) for name, vals in self.per_seed.items()}
