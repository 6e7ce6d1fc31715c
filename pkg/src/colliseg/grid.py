"""Core value types: image grids, binary masks, lines, and Hough-space geometry.

Coordinate conventions used everywhere in this package:

* The origin sits at the center of the top-left pixel, x grows to the
  right (columns), y grows downward (rows).  ``data[y, x]`` indexes a grid.
* A line is stored in normal form: the pixel center (x, y) lies on the
  line iff ``x*cos(theta) + y*sin(theta) == rho`` with theta in [0, pi)
  and rho signed, in pixels.
* Hough bins are half-open cells; the center of theta bin k is
  ``(k + 0.5) * pi / n_theta`` and the center of rho bin j is
  ``rho_min + (j + 0.5) * (rho_max - rho_min) / n_rho``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ImageGrid",
    "BinaryMask",
    "Line",
    "HoughGeometry",
    "HoughSpace",
    "PolygonSpec",
    "mask_centroid",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ImageGrid:
    """2-d scalar field with an isotropic pixel spacing in mm/px."""

    data: np.ndarray
    pixel_spacing: float = 1.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"image data must be 2-d, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("image data must be finite (no NaN/Inf)")
        if not self.pixel_spacing > 0:
            raise ValueError(f"pixel_spacing must be > 0, got {self.pixel_spacing}")
        object.__setattr__(self, "data", _readonly(data))
        object.__setattr__(self, "pixel_spacing", float(self.pixel_spacing))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class BinaryMask:
    """2-d boolean field; True marks pixels inside the region of interest."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"mask data must be 2-d, got shape {data.shape}")
        object.__setattr__(self, "data", _readonly(data.astype(bool)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def count(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True)
class Line:
    """Continuous line in normal form (theta in [0, pi), rho in pixels)."""

    theta: float
    rho: float

    def __post_init__(self):
        theta = float(self.theta)
        rho = float(self.rho)
        if not (math.isfinite(theta) and math.isfinite(rho)):
            raise ValueError("line parameters must be finite")
        if not 0.0 <= theta < math.pi:
            raise ValueError(f"theta must lie in [0, pi), got {theta}")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "rho", rho)

    def normal(self) -> tuple[float, float]:
        return math.cos(self.theta), math.sin(self.theta)


@dataclass(frozen=True)
class HoughGeometry:
    """Quantization of the (theta, rho) accumulator.

    The rho range is fixed to [-D, D] with D the image diagonal when built
    via :meth:`for_image`, which makes the accumulator shape a pure function
    of the image shape.
    """

    n_theta: int
    n_rho: int
    rho_min: float
    rho_max: float

    def __post_init__(self):
        if self.n_theta < 1 or self.n_rho < 1:
            raise ValueError("bin counts must be >= 1")
        if not self.rho_max > self.rho_min:
            raise ValueError("rho_max must exceed rho_min")

    @classmethod
    def for_image(
        cls,
        width: int,
        height: int,
        n_theta: int = 180,
        rho_bin_width: float = 1.0,
    ) -> "HoughGeometry":
        """Default quantization for a width x height grid: 1 deg / ~1 px bins."""
        if width < 1 or height < 1:
            raise ValueError("image must be at least 1x1")
        if rho_bin_width <= 0:
            raise ValueError("rho_bin_width must be > 0")
        diag = math.hypot(width, height)
        n_rho = max(1, math.ceil(2.0 * diag / rho_bin_width))
        return cls(n_theta=n_theta, n_rho=n_rho, rho_min=-diag, rho_max=diag)

    @property
    def theta_bin_width(self) -> float:
        return math.pi / self.n_theta

    @property
    def rho_bin_width(self) -> float:
        return (self.rho_max - self.rho_min) / self.n_rho

    def theta_centers(self) -> np.ndarray:
        return (np.arange(self.n_theta) + 0.5) * self.theta_bin_width

    def rho_centers(self) -> np.ndarray:
        return self.rho_min + (np.arange(self.n_rho) + 0.5) * self.rho_bin_width

    def line_from_bins(self, k: int, j: int) -> Line:
        """Line at the center of bin (k, j)."""
        if not 0 <= k < self.n_theta:
            raise ValueError(f"theta bin {k} out of range [0, {self.n_theta})")
        if not 0 <= j < self.n_rho:
            raise ValueError(f"rho bin {j} out of range [0, {self.n_rho})")
        theta = (k + 0.5) * self.theta_bin_width
        rho = self.rho_min + (j + 0.5) * self.rho_bin_width
        return Line(theta=theta, rho=rho)

    def bins_from_line(self, line: Line) -> tuple[int, int]:
        """Nearest bin indices: floor of the continuous bin coordinate, clamped."""
        if not self.rho_min <= line.rho <= self.rho_max:
            raise ValueError(
                f"rho {line.rho} outside accumulator range "
                f"[{self.rho_min}, {self.rho_max}]"
            )
        k = int(math.floor(line.theta / self.theta_bin_width))
        j = int(math.floor((line.rho - self.rho_min) / self.rho_bin_width))
        k = min(max(k, 0), self.n_theta - 1)
        j = min(max(j, 0), self.n_rho - 1)
        return k, j

    def continuous_bins(self, line: Line) -> tuple[float, float]:
        """Unclamped continuous bin coordinates of a line."""
        return (
            line.theta / self.theta_bin_width,
            (line.rho - self.rho_min) / self.rho_bin_width,
        )

    def line_from_continuous_bins(self, k: float, j: float) -> Line:
        """Decode continuous bin coordinates (e.g. a blob centroid) to a line."""
        theta = (k + 0.5) * self.theta_bin_width
        # guard against centroids in the open boundary half-cells
        theta = min(max(theta, 0.0), math.nextafter(math.pi, 0.0))
        rho = self.rho_min + (j + 0.5) * self.rho_bin_width
        return Line(theta=theta, rho=rho)


@dataclass(frozen=True)
class HoughSpace:
    """Accumulator over (theta, rho), stored row-major as data[k, j]."""

    geometry: HoughGeometry
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        expected = (self.geometry.n_theta, self.geometry.n_rho)
        if data.shape != expected:
            raise ValueError(
                f"hough data shape {data.shape} does not match geometry {expected}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("hough data must be finite")
        object.__setattr__(self, "data", _readonly(data))

    @property
    def n_theta(self) -> int:
        return self.geometry.n_theta

    @property
    def n_rho(self) -> int:
        return self.geometry.n_rho


@dataclass(frozen=True)
class PolygonSpec:
    """Convex ROI described by up to four boundary lines plus an interior point.

    The ROI is the intersection of the detector rectangle with, for every
    edge, the closed half-plane that contains ``roi_reference_point``; the
    reference point therefore also fixes each edge's orientation.
    """

    edges: tuple[Line, ...]
    roi_reference_point: tuple[float, float]

    def __post_init__(self):
        edges = tuple(self.edges)
        if len(edges) > 4:
            raise ValueError(f"at most 4 edges supported, got {len(edges)}")
        x, y = self.roi_reference_point
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValueError("roi_reference_point must be finite")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "roi_reference_point", (float(x), float(y)))

    @property
    def n_edges(self) -> int:
        return len(self.edges)


def mask_centroid(mask: BinaryMask) -> tuple[float, float]:
    """Arithmetic mean (x, y) of the true-pixel centers of a mask."""
    ys, xs = np.nonzero(mask.data)
    if xs.size == 0:
        raise ValueError("empty mask, no seed available")
    return float(xs.mean()), float(ys.mean())
