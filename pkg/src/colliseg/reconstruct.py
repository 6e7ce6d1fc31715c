"""From lines to shapes: Hough-space blobs -> lines -> flood-filled mask.

The inference pipeline thresholds a Hough space, reads each surviving blob's
magnitude-weighted center of mass as a detected line, rasterizes those lines
as an 8-connected barrier image, and 4-connected flood fills from the region
seed.  The 8/4 connectivity split is what stops the fill from leaking
diagonally through a one-pixel line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .grid import BinaryMask, HoughGeometry, HoughSpace, ImageGrid, Line, mask_centroid
from .operators import GaussianKernelSpec, _correlate1d_replicate, hough_forward, sobel

__all__ = [
    "PostprocessConfig",
    "LineSet",
    "extract_lines",
    "rasterize_lines",
    "lines_to_mask",
    "run_pipeline",
    "classical_edge_path",
]

_STRUCT_8 = np.ones((3, 3), dtype=bool)
_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class PostprocessConfig:
    """Hough-space post-processing knobs.

    ``threshold`` is a fraction of the per-image accumulator maximum, which
    keeps the sweep meaningful on unnormalized inputs.  Fill connectivity is
    fixed 4-connected and barriers 8-connected by construction.
    """

    threshold: float = 0.35
    min_blob_area: int = 1

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.min_blob_area < 1:
            raise ValueError(f"min_blob_area must be >= 1, got {self.min_blob_area}")

    def with_threshold(self, t: float) -> "PostprocessConfig":
        return replace(self, threshold=t)


@dataclass(frozen=True)
class LineSet:
    """Detected lines plus the accumulated magnitude of their source blobs."""

    lines: tuple[Line, ...]
    blob_mass: tuple[float, ...]

    def __post_init__(self):
        lines = tuple(self.lines)
        mass = tuple(float(m) for m in self.blob_mass)
        if len(lines) != len(mass):
            raise ValueError("lines and blob_mass must have equal length")
        object.__setattr__(self, "lines", lines)
        object.__setattr__(self, "blob_mass", mass)

    def __len__(self) -> int:
        return len(self.lines)

    @classmethod
    def from_lines(cls, lines: Iterable[Line]) -> "LineSet":
        lines = tuple(lines)
        return cls(lines=lines, blob_mass=tuple(1.0 for _ in lines))


_EMPTY = LineSet(lines=(), blob_mass=())


def extract_lines(h: HoughSpace, cfg: PostprocessConfig) -> LineSet:
    """Threshold the accumulator and decode blob centers of mass as lines.

    Cells survive when positive and at least ``threshold * max``; surviving
    cells are labeled 8-connected (no theta wraparound), components smaller
    than ``min_blob_area`` are dropped, and each remaining component yields
    one line at its magnitude-weighted centroid in continuous bin
    coordinates.  A non-positive accumulator yields an empty set.
    """
    data = h.data
    peak = float(data.max()) if data.size else 0.0
    if peak <= 0.0:
        return _EMPTY
    survivors = (data >= cfg.threshold * peak) & (data > 0.0)
    labels, n_blobs = ndimage.label(survivors, structure=_STRUCT_8)
    if n_blobs == 0:
        return _EMPTY

    flat_labels = labels.ravel()
    weighted = np.where(survivors, data, 0.0).ravel()
    areas = np.bincount(flat_labels, minlength=n_blobs + 1)[1:]
    mass = np.bincount(flat_labels, weights=weighted, minlength=n_blobs + 1)[1:]
    kk, jj = np.indices(data.shape)
    k_sum = np.bincount(flat_labels, weights=weighted * kk.ravel(), minlength=n_blobs + 1)[1:]
    j_sum = np.bincount(flat_labels, weights=weighted * jj.ravel(), minlength=n_blobs + 1)[1:]

    keep = areas >= cfg.min_blob_area
    entries = []
    for idx in np.nonzero(keep)[0]:
        k_bar = k_sum[idx] / mass[idx]
        j_bar = j_sum[idx] / mass[idx]
        line = h.geometry.line_from_continuous_bins(k_bar, j_bar)
        bin_key = h.geometry.bins_from_line(line)
        entries.append((bin_key, float(mass[idx]), line))

    # distinct blobs can centroid into one bin in pathological cases; keep the
    # heaviest so the LineSet invariant (pairwise distinct bins) holds
    by_bin: dict[tuple[int, int], tuple[float, Line]] = {}
    for bin_key, blob_mass, line in entries:
        if bin_key not in by_bin or blob_mass > by_bin[bin_key][0]:
            by_bin[bin_key] = (blob_mass, line)
    ranked = sorted(by_bin.values(), key=lambda t: -t[0])
    return LineSet(
        lines=tuple(line for _, line in ranked),
        blob_mass=tuple(blob_mass for blob_mass, _ in ranked),
    )


def rasterize_lines(lines: LineSet | Sequence[Line], shape: tuple[int, int]) -> BinaryMask:
    """Union of digital lines: pixels within 0.5 px perpendicular distance.

    Each digital line spans the full grid extent and is 8-connected, which is
    enough to block a 4-connected flood on the other side.
    """
    height, width = shape
    if height < 1 or width < 1:
        raise ValueError(f"shape must be at least 1x1, got {shape}")
    line_list = lines.lines if isinstance(lines, LineSet) else tuple(lines)
    mask = np.zeros((height, width), dtype=bool)
    if not line_list:
        return BinaryMask(mask)
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)[:, None]
    for line in line_list:
        cos_t, sin_t = line.normal()
        dist = np.abs(cos_t * xs + sin_t * ys - line.rho)
        mask |= dist <= 0.5
    return BinaryMask(mask)


def _relocate_seed(barrier: np.ndarray, sx: int, sy: int) -> tuple[int, int]:
    """Nearest non-barrier pixel by expanding ring search, row-major ties."""
    height, width = barrier.shape
    max_radius = max(height, width)
    for radius in range(1, max_radius + 1):
        for y in range(sy - radius, sy + radius + 1):
            if not 0 <= y < height:
                continue
            for x in range(sx - radius, sx + radius + 1):
                if not 0 <= x < width:
                    continue
                if max(abs(x - sx), abs(y - sy)) != radius:
                    continue
                if not barrier[y, x]:
                    return x, y
    raise ValueError("degenerate barrier, no fillable region")


def lines_to_mask(
    lines: LineSet | Sequence[Line],
    seed: tuple[float, float],
    shape: tuple[int, int],
) -> BinaryMask:
    """4-connected flood fill from the seed, bounded by the rasterized lines.

    Barrier pixels adjacent to the filled region are absorbed afterwards:
    the lines belong to the region they bound (ground-truth masks include
    their boundary pixels, corners included).
    """
    height, width = shape
    sx = int(math.floor(seed[0] + 0.5))
    sy = int(math.floor(seed[1] + 0.5))
    if not (0 <= sx < width and 0 <= sy < height):
        raise ValueError(f"seed {seed} outside grid bounds {shape}")
    barrier = rasterize_lines(lines, shape).data
    if barrier[sy, sx]:
        sx, sy = _relocate_seed(barrier, sx, sy)
    free = ~barrier
    labels, _ = ndimage.label(free, structure=_STRUCT_4)
    region = labels == labels[sy, sx]
    absorbed = barrier & ndimage.binary_dilation(region, structure=_STRUCT_8)
    return BinaryMask(region | absorbed)


def run_pipeline(
    region_mask: BinaryMask, hough: HoughSpace, cfg: PostprocessConfig
) -> BinaryMask:
    """Full inference composition: centroid seed + extracted lines + fill."""
    seed = mask_centroid(region_mask)
    lines = extract_lines(hough, cfg)
    return lines_to_mask(lines, seed, region_mask.shape)


def classical_edge_path(
    img: ImageGrid,
    cfg: PostprocessConfig,
    geometry: HoughGeometry | None = None,
    smooth_sigma: float = 2.0,
) -> tuple[HoughSpace, LineSet]:
    """Sobel-edge stand-in for a trained network's Hough branch.

    Accumulates the Sobel magnitude, smooths the accumulator along the rho
    axis (``smooth_sigma`` bins, 0 disables), rescales to max 1, and extracts
    lines.  The smoothing plays the role the Gaussian block plays on learned
    Hough outputs: without it the thin vote ridge of a line fragments into
    several 8-connected components wherever its rho position hops more than
    one bin between adjacent theta bins.  A featureless image yields an
    all-zero accumulator and an empty line set.
    """
    if geometry is None:
        geometry = HoughGeometry.for_image(img.width, img.height)
    edges = sobel(img).magnitude
    h = hough_forward(edges, geometry)
    data = h.data
    if smooth_sigma > 0:
        data = _correlate1d_replicate(data, GaussianKernelSpec(smooth_sigma).weights(), 1)
    peak = float(data.max())
    if peak > 0.0:
        data = data / peak
    h = HoughSpace(geometry=geometry, data=data)
    return h, extract_lines(h, cfg)
