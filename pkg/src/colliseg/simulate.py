"""Synthetic collimator shadows: random convex ROIs, physics-flavored
degradations (transmission, edge blur, scatter, Poisson noise), and
Hough-space labels.

Ground truth is free here: the sampled half-planes give the ROI mask and the
line labels at once.  Every sample is generated from its own RNG stream
derived from (seed, index), so parallel generation equals sequential
generation bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import BinaryMask, HoughGeometry, HoughSpace, ImageGrid, Line, PolygonSpec
from .operators import GaussianKernelSpec, gaussian_smooth_array

__all__ = [
    "SimulationConfig",
    "SyntheticSample",
    "polygon_roi_mask",
    "sample_polygon",
    "flat_field_phantom",
    "apply_collimation",
    "make_hough_label",
    "generate_sample",
    "generate_dataset",
]

_MAX_ATTEMPTS = 10_000


@dataclass(frozen=True)
class SimulationConfig:
    """Knobs for the shadow simulator.

    Edge angles follow the physical blade model: two orthogonal orientation
    slots at a random housing rotation, each blade deviating by at most
    ``angle_jitter_rad`` (projective skew).  ``min_edge_contact`` /
    ``min_edge_contact_ratio`` bound each edge's visible boundary segment
    (absolute pixels, and relative to the longest edge of the same polygon)
    so no ground-truth edge is hopelessly under-voted in Hough space.
    ``min_edge_separation_bins`` keeps label peaks distinct.
    ``theta_margin_rad`` keeps edge angles away from the theta = 0/pi wrap,
    where the accumulator has no continuity (a documented limitation of the
    blob post-processing: a near-vertical line splits into two components
    and its label bump truncates).  The default margin of 4 degrees covers
    the label-bump cap radius at the usual extraction thresholds; raise it
    when evaluating the raw Sobel edge path, whose vote tails reach farther.
    """

    width: int = 256
    height: int = 256
    pixel_spacing: float = 0.15
    n_edges_range: tuple[int, int] = (1, 4)
    transmission: float = 0.1
    edge_blur_sigma: float = 1.0
    scatter_amplitude: float = 0.0
    scatter_sigma: float = 32.0
    photon_scale: float | None = None
    area_fraction_range: tuple[float, float] = (0.25, 0.85)
    label_sigma: float = 2.0
    rng_seed: int = 0
    n_theta: int = 180
    rho_bin_width: float = 1.0
    min_edge_separation_bins: float = 12.0
    angle_jitter_rad: float = math.radians(8.0)
    theta_margin_rad: float = math.radians(4.0)
    min_edge_contact: float = 40.0
    min_edge_contact_ratio: float = 0.5

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("width/height must be at least 8 px")
        if not self.pixel_spacing > 0:
            raise ValueError(f"pixel_spacing must be > 0, got {self.pixel_spacing}")
        lo, hi = self.n_edges_range
        if not (0 <= lo <= hi <= 4):
            raise ValueError(f"n_edges_range must satisfy 0 <= lo <= hi <= 4, got {self.n_edges_range}")
        if not 0.0 < self.transmission <= 1.0:
            raise ValueError(f"transmission must lie in (0, 1], got {self.transmission}")
        if self.edge_blur_sigma < 0:
            raise ValueError(f"edge_blur_sigma must be >= 0, got {self.edge_blur_sigma}")
        if self.scatter_amplitude < 0:
            raise ValueError(f"scatter_amplitude must be >= 0, got {self.scatter_amplitude}")
        if not self.scatter_sigma > 0:
            raise ValueError(f"scatter_sigma must be > 0, got {self.scatter_sigma}")
        if self.photon_scale is not None and not self.photon_scale > 0:
            raise ValueError(f"photon_scale must be > 0 or None, got {self.photon_scale}")
        amin, amax = self.area_fraction_range
        if not (0.0 < amin < amax <= 1.0):
            raise ValueError(f"area_fraction_range must satisfy 0 < min < max <= 1, got {self.area_fraction_range}")
        if not self.label_sigma > 0:
            raise ValueError(f"label_sigma must be > 0, got {self.label_sigma}")
        if self.rng_seed < 0:
            raise ValueError(f"rng_seed must be >= 0, got {self.rng_seed}")
        if self.n_theta < 1:
            raise ValueError(f"n_theta must be >= 1, got {self.n_theta}")
        if not self.rho_bin_width > 0:
            raise ValueError(f"rho_bin_width must be > 0, got {self.rho_bin_width}")
        if self.min_edge_separation_bins < 0:
            raise ValueError("min_edge_separation_bins must be >= 0")
        if not 0 <= self.angle_jitter_rad <= math.pi / 4:
            raise ValueError("angle_jitter_rad must lie in [0, pi/4]")
        if self.theta_margin_rad < 0 or self.theta_margin_rad >= math.pi / 2:
            raise ValueError("theta_margin_rad must lie in [0, pi/2)")
        if self.min_edge_contact < 0 or not 0 <= self.min_edge_contact_ratio <= 1:
            raise ValueError("edge contact bounds out of range")

    def hough_geometry(self) -> HoughGeometry:
        return HoughGeometry.for_image(
            self.width, self.height, n_theta=self.n_theta, rho_bin_width=self.rho_bin_width
        )


@dataclass(frozen=True)
class SyntheticSample:
    """One simulated acquisition with its inherent ground truth."""

    image: ImageGrid
    roi_mask: BinaryMask
    gt_lines: PolygonSpec
    hough_label: HoughSpace


def _edge_signs(poly: PolygonSpec) -> np.ndarray:
    """Half-plane orientations implied by the reference point (+1 keeps >=)."""
    rx, ry = poly.roi_reference_point
    signs = np.empty(len(poly.edges))
    for i, edge in enumerate(poly.edges):
        cos_t, sin_t = edge.normal()
        value = rx * cos_t + ry * sin_t - edge.rho
        signs[i] = 1.0 if value >= 0 else -1.0
    return signs


def polygon_roi_mask(poly: PolygonSpec, width: int, height: int) -> BinaryMask:
    """Rasterize the ROI: pixels whose centers satisfy every half-plane."""
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)[:, None]
    mask = np.ones((height, width), dtype=bool)
    signs = _edge_signs(poly)
    for sign, edge in zip(signs, poly.edges):
        cos_t, sin_t = edge.normal()
        mask &= sign * (cos_t * xs + sin_t * ys - edge.rho) >= 0.0
    return BinaryMask(mask)


def _clip_interval(lo, hi, a, b):
    """Intersect [lo, hi] with {t : a*t + b >= 0}."""
    if a > 0:
        return max(lo, -b / a), hi
    if a < 0:
        return lo, min(hi, -b / a)
    return (lo, hi) if b >= 0 else (1.0, 0.0)


def _edge_contacts(
    thetas: np.ndarray, rhos: np.ndarray, signs: np.ndarray, width: int, height: int
) -> np.ndarray:
    """Length of each edge line's segment on the ROI boundary (analytic clip)."""
    k = len(thetas)
    lengths = np.zeros(k)
    for i in range(k):
        cos_i, sin_i = math.cos(thetas[i]), math.sin(thetas[i])
        # p(t) = rho*(cos, sin) + t*(-sin, cos)
        lo, hi = -1e12, 1e12
        lo, hi = _clip_interval(lo, hi, -sin_i, rhos[i] * cos_i)                     # x >= 0
        lo, hi = _clip_interval(lo, hi, sin_i, (width - 1) - rhos[i] * cos_i)        # x <= w-1
        lo, hi = _clip_interval(lo, hi, cos_i, rhos[i] * sin_i)                      # y >= 0
        lo, hi = _clip_interval(lo, hi, -cos_i, (height - 1) - rhos[i] * sin_i)      # y <= h-1
        for j in range(k):
            if j == i:
                continue
            a = signs[j] * math.sin(thetas[j] - thetas[i])
            b = signs[j] * (rhos[i] * math.cos(thetas[j] - thetas[i]) - rhos[j])
            lo, hi = _clip_interval(lo, hi, a, b)
        lengths[i] = max(0.0, hi - lo)
    return lengths


def sample_polygon(cfg: SimulationConfig, rng: np.random.Generator) -> PolygonSpec:
    """Rejection-sample a convex blade-shadow ROI.

    Each attempt draws a housing rotation, assigns every edge to one of the
    two orthogonal blade slots with projective angle jitter, and places it
    through a random interior point.  Attempts are accepted only when the
    rasterized ROI area fraction is within range, its centroid is strictly
    interior, edges are pairwise separated in Hough bin space, and every
    edge has enough visible boundary contact.
    """
    width, height = cfg.width, cfg.height
    lo, hi = cfg.n_edges_range
    k = int(rng.integers(lo, hi + 1))
    if k == 0:
        center = ((width - 1) / 2.0, (height - 1) / 2.0)
        return PolygonSpec(edges=(), roi_reference_point=center)

    geometry = cfg.hough_geometry()
    amin, amax = cfg.area_fraction_range
    total = width * height
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)[:, None]

    o_min, o_max = 0.12 * min(width, height), 0.55 * min(width, height)

    for _ in range(_MAX_ATTEMPTS):
        housing = rng.uniform(0.0, math.pi)
        # blade layout: k=2 is either a band (one slot, both sides) or a
        # corner; k=3 is a band plus one cross blade; k=4 closes both pairs
        first = int(rng.integers(0, 2))
        if k == 1:
            slots = [first]
            sides = [1.0 if rng.integers(0, 2) else -1.0]
        elif k == 2 and rng.integers(0, 2):
            slots = [first, 1 - first]
            sides = [1.0 if rng.integers(0, 2) else -1.0 for _ in range(2)]
        elif k == 2:
            slots = [first, first]
            sides = [1.0, -1.0]
        elif k == 3:
            slots = [first, first, 1 - first]
            sides = [1.0, -1.0, 1.0 if rng.integers(0, 2) else -1.0]
        else:
            slots = [first, first, 1 - first, 1 - first]
            sides = [1.0, -1.0, 1.0, -1.0]
        slots_arr = np.asarray(slots)
        sides_arr = np.asarray(sides)
        jitter = rng.uniform(-cfg.angle_jitter_rad, cfg.angle_jitter_rad, size=k)
        thetas = np.mod(housing + slots_arr * (math.pi / 2.0) + jitter, math.pi)
        center_x = rng.uniform(0.25, 0.75) * (width - 1)
        center_y = rng.uniform(0.25, 0.75) * (height - 1)
        offsets = rng.uniform(o_min, o_max, size=k)
        rhos = (
            center_x * np.cos(thetas)
            + center_y * np.sin(thetas)
            + sides_arr * offsets
        )
        signs = -sides_arr

        if cfg.theta_margin_rad > 0 and (
            thetas.min() < cfg.theta_margin_rad
            or thetas.max() > math.pi - cfg.theta_margin_rad
        ):
            continue
        if k > 1 and cfg.min_edge_separation_bins > 0:
            bk = thetas / geometry.theta_bin_width
            bj = (rhos - geometry.rho_min) / geometry.rho_bin_width
            d2 = (bk[:, None] - bk) ** 2 + (bj[:, None] - bj) ** 2
            d2[np.diag_indices(k)] = np.inf
            if d2.min() < cfg.min_edge_separation_bins**2:
                continue

        mask = np.ones((height, width), dtype=bool)
        for i in range(k):
            cos_i, sin_i = math.cos(thetas[i]), math.sin(thetas[i])
            mask &= signs[i] * (cos_i * xs + sin_i * ys - rhos[i]) >= 0.0
        area = int(mask.sum())
        if not amin * total <= area <= amax * total:
            continue

        yy, xx = np.nonzero(mask)
        cx, cy = float(xx.mean()), float(yy.mean())
        margins = signs * (np.cos(thetas) * cx + np.sin(thetas) * cy - rhos)
        if margins.min() <= 0.0:
            continue
        if not mask[int(math.floor(cy + 0.5)), int(math.floor(cx + 0.5))]:
            continue

        contacts = _edge_contacts(thetas, rhos, signs, width, height)
        required = max(cfg.min_edge_contact, cfg.min_edge_contact_ratio * contacts.max())
        if contacts.min() < required:
            continue

        edges = tuple(Line(theta=float(t), rho=float(r)) for t, r in zip(thetas, rhos))
        return PolygonSpec(edges=edges, roi_reference_point=(cx, cy))

    raise ValueError("unsatisfiable polygon constraints")


def flat_field_phantom(
    width: int, height: int, rng: np.random.Generator, pixel_spacing: float = 0.15
) -> ImageGrid:
    """Smooth non-collimated base image: flat field + gradient + soft blobs.

    Kept bright (>= 0.4 or so) and free of sharp structure so collimation
    edges dominate any edge filter applied to the result.
    """
    xn = np.linspace(0.0, 1.0, width)
    yn = np.linspace(0.0, 1.0, height)[:, None]
    img = np.ones((height, width))
    gx, gy = rng.uniform(-0.15, 0.15, size=2)
    img += gx * (xn - 0.5) + gy * (yn - 0.5)
    for _ in range(int(rng.integers(2, 5))):
        cx, cy = rng.uniform(0.15, 0.85, size=2)
        ax, ay = rng.uniform(0.1, 0.35, size=2)
        phi = rng.uniform(0.0, math.pi)
        amp = rng.uniform(-0.2, 0.25)
        u = ((xn - cx) * math.cos(phi) + (yn - cy) * math.sin(phi)) / ax
        v = (-(xn - cx) * math.sin(phi) + (yn - cy) * math.cos(phi)) / ay
        img += amp * np.exp(-(u**2 + v**2))
    return ImageGrid(np.maximum(img, 0.05), pixel_spacing)


def apply_collimation(
    base: ImageGrid, poly: PolygonSpec, cfg: SimulationConfig, rng: np.random.Generator
) -> ImageGrid:
    """Stamp a collimator shadow onto a shadow-free base image.

    Blurred transmission first, then scatter confined to the shadow
    complement, then an optional Poisson resampling of the whole frame.
    """
    if np.any(base.data < 0):
        raise ValueError("base image must be nonnegative")
    height, width = base.shape
    roi = polygon_roi_mask(poly, width, height)
    m = roi.data.astype(np.float64)
    if cfg.edge_blur_sigma > 0:
        m = gaussian_smooth_array(m, GaussianKernelSpec(cfg.edge_blur_sigma))
    alpha = cfg.transmission
    out = base.data * (alpha + (1.0 - alpha) * m)

    if cfg.scatter_amplitude > 0:
        inside = roi.data
        roi_mean = float(base.data[inside].mean()) if inside.any() else float(base.data.mean())
        scatter_field = gaussian_smooth_array(
            rng.random((height, width)), GaussianKernelSpec(cfg.scatter_sigma)
        )
        out = out + (1.0 - m) * (cfg.scatter_amplitude * roi_mean * scatter_field)

    if cfg.photon_scale is not None:
        peak = float(base.data.max())
        if peak > 0:
            scale = cfg.photon_scale / peak
            out = rng.poisson(out * scale).astype(np.float64) / scale

    return ImageGrid(out, base.pixel_spacing)


def make_hough_label(
    poly: PolygonSpec, geometry: HoughGeometry, label_sigma: float
) -> HoughSpace:
    """Gaussian-smoothed unit peaks at the ground-truth edge positions.

    Each edge deposits a bilinearly split unit impulse at its continuous bin
    coordinates (so blob centroids decode back to the edge with sub-bin
    accuracy), the field is smoothed with ``label_sigma`` in bin units, and
    the maximum is normalized to 1 when any edge exists.
    """
    if not label_sigma > 0:
        raise ValueError(f"label_sigma must be > 0, got {label_sigma}")
    acc = np.zeros((geometry.n_theta, geometry.n_rho))
    for edge in poly.edges:
        if not geometry.rho_min <= edge.rho <= geometry.rho_max:
            raise ValueError(
                f"edge rho {edge.rho} outside accumulator range "
                f"[{geometry.rho_min}, {geometry.rho_max}]"
            )
        ck, cj = geometry.continuous_bins(edge)
        uk, uj = ck - 0.5, cj - 0.5
        k0, j0 = math.floor(uk), math.floor(uj)
        fk, fj = uk - k0, uj - j0
        for dk, wk in ((0, 1.0 - fk), (1, fk)):
            for dj, wj in ((0, 1.0 - fj), (1, fj)):
                if wk * wj == 0.0:
                    continue
                k = min(max(k0 + dk, 0), geometry.n_theta - 1)
                j = min(max(j0 + dj, 0), geometry.n_rho - 1)
                acc[k, j] += wk * wj
    label = gaussian_smooth_array(acc, GaussianKernelSpec(label_sigma))
    if poly.edges:
        label = label / label.max()
    return HoughSpace(geometry=geometry, data=label)


def sample_rng(cfg: SimulationConfig, index: int) -> np.random.Generator:
    """Per-sample RNG stream derived from (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence(cfg.rng_seed, spawn_key=(index,)))


def generate_sample(
    cfg: SimulationConfig, index: int, base: ImageGrid | None = None
) -> SyntheticSample:
    """Generate sample ``index`` deterministically from (cfg, index)."""
    rng = sample_rng(cfg, index)
    if base is None:
        base = flat_field_phantom(cfg.width, cfg.height, rng, cfg.pixel_spacing)
    elif base.shape != (cfg.height, cfg.width):
        raise ValueError(
            f"base image shape {base.shape} does not match config "
            f"({cfg.height}, {cfg.width})"
        )
    poly = sample_polygon(cfg, rng)
    roi = polygon_roi_mask(poly, cfg.width, cfg.height)
    image = apply_collimation(base, poly, cfg, rng)
    label = make_hough_label(poly, cfg.hough_geometry(), cfg.label_sigma)
    return SyntheticSample(image=image, roi_mask=roi, gt_lines=poly, hough_label=label)


def generate_dataset(
    cfg: SimulationConfig, n: int, base_images: Sequence[ImageGrid] | None = None
) -> list[SyntheticSample]:
    """Generate ``n`` samples; identical (cfg, seed) gives identical output."""
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    bases = list(base_images) if base_images else None
    return [
        generate_sample(cfg, i, bases[i % len(bases)] if bases else None)
        for i in range(n)
    ]
