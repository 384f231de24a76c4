"""Measurement operators: forward application and vector-Jacobian products.

Every model maps a flat state of length d_x to measurements of length d_y and
exposes ``apply`` and ``vjp`` (J_F(x)^T v).  Both accept a single state (d_x,)
or a batch (n, d_x) and return matching shapes.  Linear variants additionally
expose a dense matrix and a cached SVD for spectral-domain guidance; calling
``svd`` on a nonlinear model raises :class:`UnsupportedOperationError`.

Grid-structured models (convolution, phase retrieval) flatten row-major; the
grid shape is a constructor argument, states stay flat vectors.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ForwardModel",
    "DenseLinear",
    "Mask",
    "CircularConv",
    "LinearScattering",
    "PhaseRetrieval",
    "UnsupportedOperationError",
    "make_gaussian_blur_kernel",
    "make_scattering_propagator",
]


class UnsupportedOperationError(RuntimeError):
    """Raised when an operation needs structure the model does not have."""


def _as_batch(x: np.ndarray, d: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != d:
            raise ValueError(f"{what} has length {x.shape[0]}, expected {d}")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"{what} must have shape ({d},) or (n, {d})")
    return x, False


class ForwardModel:
    """Base measurement operator; subclasses set d_x, d_y and the two maps."""

    is_linear: bool = False
    d_x: int
    d_y: int
    grid_shape: tuple[int, ...] | None = None

    def apply(self, x: np.ndarray) -> np.ndarray:
        X, single = _as_batch(x, self.d_x, "state")
        out = self._apply(X)
        return out[0] if single else out

    def vjp(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        X, single = _as_batch(x, self.d_x, "state")
        V, v_single = _as_batch(v, self.d_y, "cotangent")
        if X.shape[0] != V.shape[0]:
            if X.shape[0] == 1:
                X = np.broadcast_to(X, (V.shape[0], self.d_x))
            elif V.shape[0] == 1:
                V = np.broadcast_to(V, (X.shape[0], self.d_y))
            else:
                raise ValueError("state and cotangent batch sizes differ")
        out = self._vjp(X, V)
        return out[0] if (single and v_single) else out

    def _apply(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _vjp(self, X: np.ndarray, V: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def as_matrix(self) -> np.ndarray:
        if not self.is_linear:
            raise UnsupportedOperationError("model is not linear")
        return self._apply(np.eye(self.d_x)).T.copy()

    def svd(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(U, S, Vt) with A = U diag(S) Vt; cached after the first call."""
        if not self.is_linear:
            raise UnsupportedOperationError("SVD requires a linear model")
        cached = getattr(self, "_svd_cache", None)
        if cached is None:
            cached = np.linalg.svd(self.as_matrix(), full_matrices=False)
            self._svd_cache = cached
        return cached


class DenseLinear(ForwardModel):
    is_linear = True

    def __init__(self, A: np.ndarray):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2:
            raise ValueError("A must be a matrix")
        self.A = A
        self.d_y, self.d_x = A.shape

    def _apply(self, X: np.ndarray) -> np.ndarray:
        return X @ self.A.T

    def _vjp(self, X: np.ndarray, V: np.ndarray) -> np.ndarray:
        return V @ self.A


class Mask(ForwardModel):
    """Coordinatewise masking y = m * x with a binary vector m; d_y = d_x."""

    is_linear = True

    def __init__(self, mask: np.ndarray, grid_shape: tuple[int, ...] | None = None):
        mask = np.asarray(mask, dtype=float).ravel()
        if not np.all((mask == 0.0) | (mask == 1.0)):
            raise ValueError("mask entries must be 0 or 1")
        self.mask = mask
        self.d_x = self.d_y = mask.size
        self.grid_shape = tuple(grid_shape) if grid_shape is not None else None
        if self.grid_shape is not None and int(np.prod(self.grid_shape)) != self.d_x:
            raise ValueError("grid shape does not match mask length")

    def _apply(self, X: np.ndarray) -> np.ndarray:
        return X * self.mask

    def _vjp(self, X: np.ndarray, V: np.ndarray) -> np.ndarray:
        return V * self.mask

    def as_matrix(self) -> np.ndarray:
        return np.diag(self.mask)


class CircularConv(ForwardModel):
    """Circular convolution with a kernel on a 1-D or 2-D periodic grid.

    The kernel is embedded with its center at the origin, so a delta kernel is
    the identity.  The adjoint is circular correlation, i.e. convolution with
    the reversed kernel, implemented spectrally via the conjugate transfer
    function.
    """

    is_linear = True

    def __init__(self, kernel: np.ndarray, grid_shape: tuple[int, ...]):
        kernel = np.asarray(kernel, dtype=float)
        grid_shape = tuple(int(s) for s in grid_shape)
        if kernel.ndim != len(grid_shape):
            raise ValueError("kernel rank must match grid rank")
        if any(ks > gs for ks, gs in zip(kernel.shape, grid_shape)):
            raise ValueError("kernel larger than grid")
        if any(ks % 2 == 0 for ks in kernel.shape):
            raise ValueError("kernel sides must be odd (centered)")
        self.kernel = kernel
        self.grid_shape = grid_shape
        self.d_x = self.d_y = int(np.prod(grid_shape))
        embedded = np.zeros(grid_shape)
        slices = tuple(slice(0, ks) for ks in kernel.shape)
        embedded[slices] = kernel
        shifts = tuple(-(ks // 2) for ks in kernel.shape)
        embedded = np.roll(embedded, shifts, axis=tuple(range(len(grid_shape))))
        self._transfer = np.fft.fftn(embedded)

    def _conv(self, X: np.ndarray, transfer: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        grids = X.reshape((n, *self.grid_shape))
        axes = tuple(range(1, 1 + len(self.grid_shape)))
        out = np.fft.ifftn(np.fft.fftn(grids, axes=axes) * transfer, axes=axes)
        return out.real.reshape(n, self.d_x)

    def _apply(self, X: np.ndarray) -> np.ndarray:
        return self._conv(X, self._transfer)

    def _vjp(self, X: np.ndarray, V: np.ndarray) -> np.ndarray:
        return self._conv(V, np.conj(self._transfer))


class LinearScattering(ForwardModel):
    """y = H (u_in * x): propagator applied to the field scattered by x."""

    is_linear = True

    def __init__(self, propagator: np.ndarray, u_in: np.ndarray | None = None):
        H = np.asarray(propagator, dtype=float)
        if H.ndim != 2:
            raise ValueError("propagator must be a matrix")
        self.H = H
        self.d_y, self.d_x = H.shape
        if u_in is None:
            u_in = np.ones(self.d_x)
        u_in = np.asarray(u_in, dtype=float).ravel()
        if u_in.shape[0] != self.d_x:
            raise ValueError("incident field length must match d_x")
        self.u_in = u_in

    def _apply(self, X: np.ndarray) -> np.ndarray:
        return (X * self.u_in) @ self.H.T

    def _vjp(self, X: np.ndarray, V: np.ndarray) -> np.ndarray:
        return (V @ self.H) * self.u_in

    def as_matrix(self) -> np.ndarray:
        return self.H * self.u_in[None, :]


class PhaseRetrieval(ForwardModel):
    """Magnitudes of the half-spectrum 2-D DFT of a real grid signal.

    y = |T x| where T keeps the non-redundant rfft2 coefficients, so
    d_y = rows * (cols // 2 + 1) <= d_x at desk scale.  The magnitude is
    nonsmooth at 0; directions where |Tx| < eps_mag get a zero derivative
    (subgradient choice), which keeps vjp finite everywhere.
    """

    is_linear = False

    def __init__(self, grid_shape: tuple[int, int], eps_mag: float = 1e-8):
        rows, cols = (int(s) for s in grid_shape)
        if rows < 1 or cols < 1:
            raise ValueError("grid sides must be positive")
        self.grid_shape = (rows, cols)
        self.eps_mag = float(eps_mag)
        if self.eps_mag <= 0.0:
            raise ValueError("eps_mag must be positive")
        self.d_x = rows * cols
        self.d_y = rows * (cols // 2 + 1)
        basis = np.eye(self.d_x).reshape(self.d_x, rows, cols)
        self._T = np.fft.rfft2(basis).reshape(self.d_x, self.d_y).T.copy()

    def _spectrum(self, X: np.ndarray) -> np.ndarray:
        return X @ self._T.T

    def _apply(self, X: np.ndarray) -> np.ndarray:
        return np.abs(self._spectrum(X))

    def _vjp(self, X: np.ndarray, V: np.ndarray) -> np.ndarray:
        z = self._spectrum(X)
        mag = np.abs(z)
        safe = np.where(mag < self.eps_mag, 1.0, mag)
        phase = np.where(mag < self.eps_mag, 0.0, 1.0) * np.conj(z) / safe
        return np.real((V * phase) @ self._T)


def make_gaussian_blur_kernel(sigma_blur: float, size: int) -> np.ndarray:
    """Normalized isotropic Gaussian kernel, size x size, size odd.

    The reference deblurring configuration uses sigma_blur=3 with a 61x61
    kernel; desk-scale grids shrink both.
    """
    sigma_blur = float(sigma_blur)
    size = int(size)
    if size < 1 or size % 2 == 0:
        raise ValueError("size must be a positive odd integer")
    if not sigma_blur > 0.0:
        raise ValueError("sigma_blur must be positive")
    half = size // 2
    coords = np.arange(-half, half + 1, dtype=float)
    g = np.exp(-0.5 * (coords / sigma_blur) ** 2)
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def make_scattering_propagator(
    grid_shape: tuple[int, int],
    scale: float,
    rng: np.random.Generator,
    n_receivers: int | None = None,
    amplitude: float = 1.0,
) -> np.ndarray:
    """Synthetic distance-decaying propagator on unit-square grid points.

    H[i, j] = amplitude / (1 + ||q_i - p_j|| / scale) with p_j the regular
    grid points and q_i receiver locations drawn uniformly from the rng
    (deterministic per seed).  A dense, ill-conditioned linear map standing in
    for a physical propagator; scale -> inf makes every row constant.
    """
    rows, cols = (int(s) for s in grid_shape)
    scale = float(scale)
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    d_x = rows * cols
    if n_receivers is None:
        n_receivers = d_x
    n_receivers = int(n_receivers)
    if n_receivers < 1:
        raise ValueError("need at least one receiver")
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    points = np.stack(
        [rr.ravel() / max(rows - 1, 1), cc.ravel() / max(cols - 1, 1)], axis=1
    )
    receivers = rng.uniform(0.0, 1.0, size=(n_receivers, 2))
    dist = np.linalg.norm(receivers[:, None, :] - points[None, :, :], axis=2)
    return float(amplitude) / (1.0 + dist / scale)
