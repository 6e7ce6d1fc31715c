"""Differentiable known-operator kernels: Sobel, Gaussian smoothing, Hough.

All three operators are linear maps with analytic adjoints (the correlation
transpose for the filters, the vote transpose for the Hough transform), so
gradients of any scalar functional built on them are exact compositions of
the adjoints.  Replicate-border padding is used for both filters to avoid
manufacturing spurious edges at the detector border.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import HoughGeometry, HoughSpace, ImageGrid

__all__ = [
    "SOBEL_KERNEL_X",
    "SOBEL_KERNEL_Y",
    "SobelResponse",
    "GaussianKernelSpec",
    "GradientCheckReport",
    "sobel",
    "sobel_adjoint",
    "gaussian_smooth",
    "gaussian_smooth_array",
    "gaussian_smooth_adjoint",
    "hough_forward",
    "hough_adjoint",
    "finite_difference_check",
]

SOBEL_KERNEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_KERNEL_Y = SOBEL_KERNEL_X.T.copy()


# ---------------------------------------------------------------------------
# replicate-padded correlation primitives and their exact adjoints


def correlate2d_replicate(data: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Correlate with an odd-sized 2-d kernel under replicate-border padding."""
    kh, kw = kernel.shape
    ry, rx = kh // 2, kw // 2
    h, w = data.shape
    padded = np.pad(data, ((ry, ry), (rx, rx)), mode="edge")
    out = np.zeros((h, w), dtype=np.float64)
    for dy in range(kh):
        for dx in range(kw):
            weight = kernel[dy, dx]
            if weight != 0.0:
                out += weight * padded[dy : dy + h, dx : dx + w]
    return out


def correlate2d_replicate_adjoint(grad: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Transpose of :func:`correlate2d_replicate` (scatter, then fold the pad)."""
    kh, kw = kernel.shape
    ry, rx = kh // 2, kw // 2
    h, w = grad.shape
    acc = np.zeros((h + 2 * ry, w + 2 * rx), dtype=np.float64)
    for dy in range(kh):
        for dx in range(kw):
            weight = kernel[dy, dx]
            if weight != 0.0:
                acc[dy : dy + h, dx : dx + w] += weight * grad
    if ry:
        acc[ry] += acc[:ry].sum(axis=0)
        acc[h + ry - 1] += acc[h + ry :].sum(axis=0)
    if rx:
        acc[:, rx] += acc[:, :rx].sum(axis=1)
        acc[:, w + rx - 1] += acc[:, w + rx :].sum(axis=1)
    return acc[ry : ry + h, rx : rx + w].copy()


def _correlate1d_replicate(data: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    r = len(weights) // 2
    n = data.shape[axis]
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    padded = np.pad(data, pad, mode="edge")
    out = np.zeros_like(data, dtype=np.float64)
    index: list = [slice(None), slice(None)]
    for tap, weight in enumerate(weights):
        index[axis] = slice(tap, tap + n)
        out += weight * padded[tuple(index)]
    return out


def _correlate1d_replicate_adjoint(grad: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    r = len(weights) // 2
    n = grad.shape[axis]
    shape = list(grad.shape)
    shape[axis] = n + 2 * r
    acc = np.zeros(shape, dtype=np.float64)
    index: list = [slice(None), slice(None)]
    for tap, weight in enumerate(weights):
        index[axis] = slice(tap, tap + n)
        acc[tuple(index)] += weight * grad

    def _slab(lo, hi):
        s: list = [slice(None), slice(None)]
        s[axis] = slice(lo, hi)
        return tuple(s)

    if r:
        acc[_slab(r, r + 1)] += acc[_slab(0, r)].sum(axis=axis, keepdims=True)
        acc[_slab(n + r - 1, n + r)] += acc[_slab(n + r, n + 2 * r)].sum(
            axis=axis, keepdims=True
        )
    return acc[_slab(r, r + n)]


# ---------------------------------------------------------------------------
# Sobel


@dataclass(frozen=True)
class SobelResponse:
    """Per-axis Sobel responses and their Euclidean magnitude."""

    gx: ImageGrid
    gy: ImageGrid
    magnitude: ImageGrid


def sobel(img: ImageGrid) -> SobelResponse:
    """Sobel responses of an image under replicate-border padding.

    ``gx`` correlates with [[-1,0,1],[-2,0,2],[-1,0,1]] (responds to values
    increasing along +x) and ``gy`` with its transpose.
    """
    if img.height < 3 or img.width < 3:
        raise ValueError(f"sobel requires an image of at least 3x3, got {img.shape}")
    gx = correlate2d_replicate(img.data, SOBEL_KERNEL_X)
    gy = correlate2d_replicate(img.data, SOBEL_KERNEL_Y)
    mag = np.hypot(gx, gy)
    spacing = img.pixel_spacing
    return SobelResponse(
        gx=ImageGrid(gx, spacing),
        gy=ImageGrid(gy, spacing),
        magnitude=ImageGrid(mag, spacing),
    )


def sobel_adjoint(grad_gx: np.ndarray, grad_gy: np.ndarray) -> np.ndarray:
    """Pull cotangents on (gx, gy) back to the input image."""
    return correlate2d_replicate_adjoint(
        np.asarray(grad_gx, dtype=np.float64), SOBEL_KERNEL_X
    ) + correlate2d_replicate_adjoint(np.asarray(grad_gy, dtype=np.float64), SOBEL_KERNEL_Y)


# ---------------------------------------------------------------------------
# Gaussian smoothing


@dataclass(frozen=True)
class GaussianKernelSpec:
    """Truncated, renormalized Gaussian; radius defaults to ceil(3*sigma)."""

    sigma: float
    radius: int | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        radius = self.radius
        if radius is None:
            radius = max(1, math.ceil(3.0 * self.sigma))
        if radius < 1:
            raise ValueError(f"radius must be >= 1, got {radius}")
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "radius", int(radius))

    def weights(self) -> np.ndarray:
        """1-d kernel taps, normalized to sum exactly to 1."""
        offsets = np.arange(-self.radius, self.radius + 1, dtype=np.float64)
        w = np.exp(-0.5 * (offsets / self.sigma) ** 2)
        return w / w.sum()


def gaussian_smooth_array(data: np.ndarray, spec: GaussianKernelSpec) -> np.ndarray:
    """Separable Gaussian smoothing of a raw 2-d array, replicate padding."""
    w = spec.weights()
    return _correlate1d_replicate(_correlate1d_replicate(np.asarray(data, float), w, 0), w, 1)


def gaussian_smooth(img: ImageGrid, spec: GaussianKernelSpec) -> ImageGrid:
    """Gaussian smoothing of an image; output dimensions equal the input."""
    return ImageGrid(gaussian_smooth_array(img.data, spec), img.pixel_spacing)


def gaussian_smooth_adjoint(grad: np.ndarray, spec: GaussianKernelSpec) -> np.ndarray:
    """Transpose of :func:`gaussian_smooth_array` (reversed 1-d adjoint passes)."""
    w = spec.weights()
    return _correlate1d_replicate_adjoint(
        _correlate1d_replicate_adjoint(np.asarray(grad, float), w, 1), w, 0
    )


# ---------------------------------------------------------------------------
# Hough transform


@functools.lru_cache(maxsize=8)
def _rho_bin_table(geometry: HoughGeometry, height: int, width: int) -> np.ndarray:
    """Per-theta flat rho-bin index of every pixel; validates range coverage.

    The table is a pure function of (geometry, image shape) and is cached:
    repeated transforms over the same shapes pay only for the accumulation.
    """
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)[:, None]
    thetas = geometry.theta_centers()
    inv_width = 1.0 / geometry.rho_bin_width
    table = np.empty((geometry.n_theta, height * width), dtype=np.int32)
    for k in range(geometry.n_theta):
        rho = math.cos(thetas[k]) * xs + math.sin(thetas[k]) * ys
        lo = rho.min()
        hi = rho.max()
        if lo < geometry.rho_min or hi > geometry.rho_max:
            raise ValueError(
                "rho range too small: pixel rho in "
                f"[{lo:.3f}, {hi:.3f}] exceeds [{geometry.rho_min}, {geometry.rho_max}]"
            )
        j = np.floor((rho - geometry.rho_min) * inv_width).astype(np.int32)
        np.clip(j, 0, geometry.n_rho - 1, out=j)
        table[k] = j.ravel()
    table.setflags(write=False)
    return table


def hough_forward(img: ImageGrid, geometry: HoughGeometry) -> HoughSpace:
    """Vote every pixel value into its nearest rho bin, once per theta bin.

    Linear in the input; the accumulator total equals n_theta * sum(img).
    """
    table = _rho_bin_table(geometry, img.height, img.width)
    values = img.data.ravel()
    acc = np.zeros((geometry.n_theta, geometry.n_rho), dtype=np.float64)
    for k in range(geometry.n_theta):
        acc[k] = np.bincount(table[k], weights=values, minlength=geometry.n_rho)
    return HoughSpace(geometry=geometry, data=acc)


def hough_adjoint(
    h: HoughSpace, img_shape: tuple[int, int], pixel_spacing: float = 1.0
) -> ImageGrid:
    """Exact linear adjoint of :func:`hough_forward` (the inverse Hough spread).

    ``img_shape`` is (height, width); each pixel gathers the accumulator cell
    it would have voted into, summed over theta bins.
    """
    height, width = img_shape
    if height < 1 or width < 1:
        raise ValueError(f"image shape must be at least 1x1, got {img_shape}")
    try:
        table = _rho_bin_table(h.geometry, height, width)
    except ValueError as exc:
        raise ValueError(f"hough space inconsistent with image shape {img_shape}: {exc}")
    out = np.zeros(height * width, dtype=np.float64)
    for k in range(h.geometry.n_theta):
        out += h.data[k][table[k]]
    return ImageGrid(out.reshape(height, width), pixel_spacing)


# ---------------------------------------------------------------------------
# gradient verification


@dataclass(frozen=True)
class GradientCheckReport:
    """Comparison of an analytic gradient against central finite differences."""

    max_abs_error: float
    max_rel_error: float
    grad_norm: float
    step: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def finite_difference_check(
    functional: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    step: float = 1e-4,
    tolerance: float = 1e-4,
) -> GradientCheckReport:
    """Check an analytic gradient coordinate-by-coordinate.

    The relative error is the max absolute deviation scaled by the larger of
    the two gradients' sup norms, so a zero analytic gradient against a zero
    finite-difference gradient still reports cleanly.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    analytic = np.asarray(gradient(x0), dtype=np.float64)
    if analytic.shape != x0.shape:
        raise ValueError(
            f"gradient shape {analytic.shape} does not match input {x0.shape}"
        )
    fd = np.zeros_like(x0)
    for idx in np.ndindex(x0.shape):
        xp = x0.copy()
        xp[idx] += step
        xm = x0.copy()
        xm[idx] -= step
        fd[idx] = (float(functional(xp)) - float(functional(xm))) / (2.0 * step)
    max_abs = float(np.abs(fd - analytic).max())
    scale = max(float(np.abs(analytic).max()), float(np.abs(fd).max()), 1e-12)
    return GradientCheckReport(
        max_abs_error=max_abs,
        max_rel_error=max_abs / scale,
        grad_norm=float(np.linalg.norm(analytic)),
        step=step,
        tolerance=tolerance,
    )
