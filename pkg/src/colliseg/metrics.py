"""Evaluation and loss machinery: EA line similarity, bipartite matching,
F1 threshold sweeps, Dice, average Hausdorff distance in mm, and the
composite mask + Hough loss with analytic gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage, optimize, spatial

from .grid import BinaryMask, HoughSpace, ImageGrid, Line
from .reconstruct import LineSet, PostprocessConfig, extract_lines

__all__ = [
    "LossWeights",
    "MatchReport",
    "SweepCurve",
    "BoxStats",
    "SampleEval",
    "MetricReport",
    "ea_score",
    "match_lines",
    "f1_sweep",
    "dice",
    "dice_loss",
    "ms_ssim_loss",
    "total_loss",
    "avg_hausdorff_mm",
    "box_stats",
    "evaluate_dataset",
]

_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_SIGMA = 1.5
_MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def _field(a) -> np.ndarray:
    if isinstance(a, (HoughSpace, ImageGrid)):
        return a.data
    return np.asarray(a, dtype=np.float64)


def _mask_data(a) -> np.ndarray:
    if isinstance(a, BinaryMask):
        return a.data
    return np.asarray(a).astype(bool)


def _lines(a) -> tuple[Line, ...]:
    if isinstance(a, LineSet):
        return a.lines
    return tuple(a)


@dataclass(frozen=True)
class LossWeights:
    """Weights of the composite loss; both empirically default to 1."""

    delta: float = 1.0
    epsilon: float = 1.0

    def __post_init__(self):
        if self.delta < 0 or self.epsilon < 0:
            raise ValueError("loss weights must be nonnegative")


# ---------------------------------------------------------------------------
# EA score and line matching


def _clip_interval(lo, hi, a, b):
    """Intersect [lo, hi] with {t : a*t + b >= 0}."""
    if a > 0:
        return max(lo, -b / a), hi
    if a < 0:
        return lo, min(hi, -b / a)
    return (lo, hi) if b >= 0 else (1.0, 0.0)


def _chord_midpoint(line: Line, shape: tuple[int, int]) -> tuple[float, float]:
    """Midpoint of the line's chord on [0, w-1] x [0, h-1], or None."""
    height, width = shape
    cos_t, sin_t = line.normal()
    p0x, p0y = line.rho * cos_t, line.rho * sin_t
    dx, dy = -sin_t, cos_t
    lo, hi = -1e12, 1e12
    lo, hi = _clip_interval(lo, hi, dx, p0x)
    lo, hi = _clip_interval(lo, hi, -dx, (width - 1) - p0x)
    lo, hi = _clip_interval(lo, hi, dy, p0y)
    lo, hi = _clip_interval(lo, hi, -dy, (height - 1) - p0y)
    if hi < lo:
        return None
    mid = 0.5 * (lo + hi)
    return (p0x + mid * dx, p0y + mid * dy)


def ea_score(a: Line, b: Line, shape: tuple[int, int]) -> float:
    """Euclidean-and-Angular similarity of two lines, in [0, 1].

    The angular term decays linearly to zero at a pi/2 difference; the
    Euclidean term measures the distance of the two image-chord midpoints in
    coordinates normalized to the unit square; the product is squared.
    """
    ma = _chord_midpoint(a, shape)
    mb = _chord_midpoint(b, shape)
    if ma is None or mb is None:
        raise ValueError("line outside image")
    d_theta = abs(a.theta - b.theta)
    d_theta = min(d_theta, math.pi - d_theta)
    s_angular = max(0.0, 1.0 - d_theta / (math.pi / 2.0))
    height, width = shape
    d_mid = math.hypot((ma[0] - mb[0]) / width, (ma[1] - mb[1]) / height)
    s_euclid = max(0.0, 1.0 - d_mid / math.sqrt(2.0))
    return (s_angular * s_euclid) ** 2


@dataclass(frozen=True)
class MatchReport:
    """One-to-one line assignment. Pairs are (pred index, gt index, score)."""

    pairs: tuple[tuple[int, int, float], ...]
    unmatched_pred: tuple[int, ...]
    unmatched_gt: tuple[int, ...]

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def n_pred(self) -> int:
        return len(self.pairs) + len(self.unmatched_pred)

    @property
    def n_gt(self) -> int:
        return len(self.pairs) + len(self.unmatched_gt)

    @property
    def precision(self) -> float:
        if self.n_pred == 0:
            return 1.0 if self.n_gt == 0 else 0.0
        return self.tp / self.n_pred

    @property
    def recall(self) -> float:
        if self.n_gt == 0:
            return 1.0 if self.n_pred == 0 else 0.0
        return self.tp / self.n_gt

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def match_lines(
    pred: LineSet | Sequence[Line],
    gt: LineSet | Sequence[Line],
    shape: tuple[int, int],
    accept_threshold: float = 0.9,
) -> MatchReport:
    """Maximum-weight bipartite matching on the EA score matrix.

    The optimal assignment is computed first; matched pairs scoring below
    ``accept_threshold`` are rejected afterwards.  Lines that miss the image
    rectangle entirely score zero against everything (they can never become
    true positives but still count as detections).
    """
    if not 0.0 <= accept_threshold <= 1.0:
        raise ValueError(f"accept_threshold must lie in [0, 1], got {accept_threshold}")
    pred_lines = _lines(pred)
    gt_lines = _lines(gt)
    n, m = len(pred_lines), len(gt_lines)
    if n == 0 or m == 0:
        return MatchReport(pairs=(), unmatched_pred=tuple(range(n)), unmatched_gt=tuple(range(m)))

    pred_mid = [_chord_midpoint(l, shape) for l in pred_lines]
    gt_mid = [_chord_midpoint(l, shape) for l in gt_lines]
    score = np.zeros((n, m))
    for i in range(n):
        if pred_mid[i] is None:
            continue
        for j in range(m):
            if gt_mid[j] is None:
                continue
            score[i, j] = ea_score(pred_lines[i], gt_lines[j], shape)

    rows, cols = optimize.linear_sum_assignment(score, maximize=True)
    pairs = []
    for i, j in zip(rows, cols):
        s = float(score[i, j])
        if s >= accept_threshold:
            pairs.append((int(i), int(j), s))
    matched_pred = {i for i, _, _ in pairs}
    matched_gt = {j for _, j, _ in pairs}
    return MatchReport(
        pairs=tuple(pairs),
        unmatched_pred=tuple(i for i in range(n) if i not in matched_pred),
        unmatched_gt=tuple(j for j in range(m) if j not in matched_gt),
    )


@dataclass(frozen=True)
class SweepCurve:
    """Precision/recall/F1 as a function of the Hough post-processing threshold."""

    thresholds: tuple[float, ...]
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]

    def __post_init__(self):
        n = len(self.thresholds)
        if not (len(self.precision) == len(self.recall) == len(self.f1) == n):
            raise ValueError("sweep arrays must have equal length")
        if any(b < a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ValueError("thresholds must be ascending")

    @property
    def best_index(self) -> int:
        return int(np.argmax(self.f1))

    @property
    def best_threshold(self) -> float:
        return self.thresholds[self.best_index]

    @property
    def best_f1(self) -> float:
        return self.f1[self.best_index]


def f1_sweep(
    samples: Sequence[tuple[HoughSpace, LineSet | Sequence[Line]]],
    shape: tuple[int, int],
    cfg: PostprocessConfig,
    ea_accept: float,
    thresholds: Sequence[float],
) -> SweepCurve:
    """Re-extract predicted lines at each threshold and score against truth.

    Precision and recall are averaged over samples; the curve F1 is the
    harmonic mean of those averages, so the SweepCurve invariant
    ``f1 == 2pr/(p+r)`` holds exactly at every point.
    """
    if len(samples) == 0:
        raise ValueError("empty sample list")
    thresholds = tuple(float(t) for t in thresholds)
    precisions, recalls, f1s = [], [], []
    for t in thresholds:
        cfg_t = cfg.with_threshold(t)
        reports = [
            match_lines(extract_lines(h, cfg_t), gt, shape, ea_accept)
            for h, gt in samples
        ]
        p = float(np.mean([r.precision for r in reports]))
        r = float(np.mean([r.recall for r in reports]))
        precisions.append(p)
        recalls.append(r)
        f1s.append(2.0 * p * r / (p + r) if p + r > 0 else 0.0)
    return SweepCurve(
        thresholds=thresholds,
        precision=tuple(precisions),
        recall=tuple(recalls),
        f1=tuple(f1s),
    )


# ---------------------------------------------------------------------------
# mask metrics


def dice(a: BinaryMask | np.ndarray, b: BinaryMask | np.ndarray) -> float:
    """Dice similarity coefficient 2|A^B| / (|A|+|B|); 1 when both are empty."""
    da, db = _mask_data(a), _mask_data(b)
    if da.shape != db.shape:
        raise ValueError(f"dice requires equal shapes, got {da.shape} vs {db.shape}")
    denom = int(da.sum()) + int(db.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((da & db).sum()) / denom


def dice_loss(
    pred: np.ndarray | ImageGrid, gt: BinaryMask | np.ndarray, smooth: float = 1.0
) -> tuple[float, np.ndarray]:
    """Smoothed soft-Dice loss and its analytic gradient wrt the prediction.

    The smoothing term keeps the gradient defined at an empty prediction;
    the plain metric (no smoothing) lives in :func:`dice`.
    """
    p = _field(pred)
    g = _mask_data(gt).astype(np.float64)
    if p.shape != g.shape:
        raise ValueError(f"dice_loss requires equal shapes, got {p.shape} vs {g.shape}")
    if p.min() < 0.0 or p.max() > 1.0:
        raise ValueError("soft prediction values must lie in [0, 1]")
    inter = float((p * g).sum())
    total = float(p.sum() + g.sum())
    num = 2.0 * inter + smooth
    den = total + smooth
    loss = 1.0 - num / den
    grad = -(2.0 * g * den - num) / den**2
    return loss, grad


# ---------------------------------------------------------------------------
# MS-SSIM loss with a hand-written reverse pass


def _ssim_window(size: int) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-0.5 * (offsets / _SSIM_SIGMA) ** 2)
    return w / w.sum()


def _corr1d_valid(data, w, axis):
    n = data.shape[axis]
    out_len = n - len(w) + 1
    shape = list(data.shape)
    shape[axis] = out_len
    out = np.zeros(shape)
    index: list = [slice(None), slice(None)]
    for tap, weight in enumerate(w):
        index[axis] = slice(tap, tap + out_len)
        out += weight * data[tuple(index)]
    return out


def _corr1d_valid_adjoint(grad, w, axis, n):
    out_len = grad.shape[axis]
    shape = list(grad.shape)
    shape[axis] = n
    acc = np.zeros(shape)
    index: list = [slice(None), slice(None)]
    for tap, weight in enumerate(w):
        index[axis] = slice(tap, tap + out_len)
        acc[tuple(index)] += weight * grad
    return acc


def _win_filter(a, w):
    return _corr1d_valid(_corr1d_valid(a, w, 0), w, 1)


def _win_filter_adjoint(g, w, shape):
    return _corr1d_valid_adjoint(_corr1d_valid_adjoint(g, w, 1, shape[1]), w, 0, shape[0])


def _pool2(a):
    h, w = a.shape
    a = a[: h - h % 2, : w - w % 2]
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


def _pool2_adjoint(g, orig_shape):
    acc = np.zeros(orig_shape)
    hp, wp = g.shape
    gg = 0.25 * g
    acc[0 : 2 * hp : 2, 0 : 2 * wp : 2] += gg
    acc[1 : 2 * hp : 2, 0 : 2 * wp : 2] += gg
    acc[0 : 2 * hp : 2, 1 : 2 * wp : 2] += gg
    acc[1 : 2 * hp : 2, 1 : 2 * wp : 2] += gg
    return acc


def _ssim_maps(x, y, w, c1, c2):
    mu_x = _win_filter(x, w)
    mu_y = _win_filter(y, w)
    sxx = _win_filter(x * x, w) - mu_x**2
    syy = _win_filter(y * y, w) - mu_y**2
    sxy = _win_filter(x * y, w) - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + c1
    b1 = mu_x**2 + mu_y**2 + c1
    a2 = 2.0 * sxy + c2
    b2 = sxx + syy + c2
    return {
        "mu_x": mu_x,
        "mu_y": mu_y,
        "a1": a1,
        "b1": b1,
        "a2": a2,
        "b2": b2,
        "l_map": a1 / b1,
        "cs_map": a2 / b2,
    }


def _ssim_backward(x, y, ctx, d_l_map, d_cs_map, w):
    """Gradient of (l_map, cs_map) cotangents wrt x; y is held constant."""
    mu_x, mu_y = ctx["mu_x"], ctx["mu_y"]
    a1, b1, a2, b2 = ctx["a1"], ctx["b1"], ctx["a2"], ctx["b2"]
    d_a2 = d_cs_map / b2
    d_b2 = -d_cs_map * a2 / b2**2
    d_sxy = 2.0 * d_a2
    d_sxx = d_b2
    d_a1 = d_l_map / b1
    d_b1 = -d_l_map * a1 / b1**2
    d_mu_x = 2.0 * mu_y * d_a1 + 2.0 * mu_x * d_b1
    d_mu_x += -mu_y * d_sxy - 2.0 * mu_x * d_sxx
    dx = y * _win_filter_adjoint(d_sxy, w, x.shape)
    dx += 2.0 * x * _win_filter_adjoint(d_sxx, w, x.shape)
    dx += _win_filter_adjoint(d_mu_x, w, x.shape)
    return dx


def ms_ssim_loss(
    pred,
    gt,
    scales: int = 5,
    window: int = 11,
    data_range: float | None = None,
) -> tuple[float, np.ndarray]:
    """1 - MS-SSIM between two fields, with the gradient wrt the prediction.

    Standard constants (K1=0.01, K2=0.03), Gaussian window of the given odd
    size with sigma 1.5, 2x mean-pool downsampling (odd trailing row/column
    cropped), and the standard five scale weights renormalized to the chosen
    scale count.  ``data_range`` defaults to the max over both inputs and is
    treated as a constant by the gradient.
    """
    x = _field(pred)
    y = _field(gt)
    if x.shape != y.shape:
        raise ValueError(f"inputs must share a shape, got {x.shape} vs {y.shape}")
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    if not 1 <= scales <= len(_MSSSIM_WEIGHTS):
        raise ValueError(f"scales must lie in [1, {len(_MSSSIM_WEIGHTS)}], got {scales}")
    if min(x.shape) // 2 ** (scales - 1) < window:
        raise ValueError(
            f"inputs of shape {x.shape} are too small for {scales} scales "
            f"with window {window}"
        )
    if data_range is None:
        data_range = max(float(x.max()), float(y.max()))
    if data_range <= 0:
        data_range = 1.0
    c1 = (_SSIM_K1 * data_range) ** 2
    c2 = (_SSIM_K2 * data_range) ** 2
    weights = np.asarray(_MSSSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    w = _ssim_window(window)

    levels = []
    factors = np.zeros(scales)
    cur_x, cur_y = x, y
    for s in range(scales):
        ctx = _ssim_maps(cur_x, cur_y, w, c1, c2)
        if s < scales - 1:
            factors[s] = ctx["cs_map"].mean()
        else:
            factors[s] = (ctx["l_map"] * ctx["cs_map"]).mean()
        levels.append((cur_x, cur_y, ctx))
        if s < scales - 1:
            cur_x, cur_y = _pool2(cur_x), _pool2(cur_y)

    clamped = np.maximum(factors, 0.0)
    if np.any(clamped == 0.0):
        # structural similarity fully saturated; the clamp kills the gradient
        return 1.0, np.zeros_like(x)
    ms = float(np.prod(clamped**weights))
    d_factors = -ms * weights / clamped

    grad = None
    for s in reversed(range(scales)):
        cur_x, cur_y, ctx = levels[s]
        n_map = ctx["cs_map"].size
        if s == scales - 1:
            d_l = d_factors[s] * ctx["cs_map"] / n_map
            d_cs = d_factors[s] * ctx["l_map"] / n_map
        else:
            d_l = np.zeros_like(ctx["l_map"])
            d_cs = np.full_like(ctx["cs_map"], d_factors[s] / n_map)
        local = _ssim_backward(cur_x, cur_y, ctx, d_l, d_cs, w)
        grad = local if grad is None else local + _pool2_adjoint(grad, cur_x.shape)
    return 1.0 - ms, grad


def total_loss(pred_mask, gt_mask, pred_hough, gt_hough, weights: LossWeights, **ms_kwargs) -> float:
    """Composite loss: delta * mask (Dice) loss + epsilon * Hough (MS-SSIM) loss."""
    total = 0.0
    if weights.delta != 0.0:
        total += weights.delta * dice_loss(pred_mask, gt_mask)[0]
    if weights.epsilon != 0.0:
        total += weights.epsilon * ms_ssim_loss(pred_hough, gt_hough, **ms_kwargs)[0]
    return total


# ---------------------------------------------------------------------------
# boundary distance


def _boundary_points(mask: np.ndarray) -> np.ndarray:
    """Pixel centers 4-adjacent to a non-mask pixel or to the image border."""
    interior = ndimage.binary_erosion(mask, structure=_STRUCT_4, border_value=0)
    ys, xs = np.nonzero(mask & ~interior)
    return np.column_stack([xs, ys]).astype(np.float64)


def avg_hausdorff_mm(
    a: BinaryMask | np.ndarray, b: BinaryMask | np.ndarray, spacing: float
) -> float:
    """Symmetric mean boundary-to-boundary distance, scaled to millimeters."""
    da, db = _mask_data(a), _mask_data(b)
    if da.shape != db.shape:
        raise ValueError(f"masks must share a shape, got {da.shape} vs {db.shape}")
    if not spacing > 0:
        raise ValueError(f"spacing must be > 0, got {spacing}")
    if not da.any() or not db.any():
        raise ValueError("undefined distance for empty mask")
    pa = _boundary_points(da)
    pb = _boundary_points(db)
    d_ab = spatial.cKDTree(pb).query(pa)[0]
    d_ba = spatial.cKDTree(pa).query(pb)[0]
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean())) * spacing


# ---------------------------------------------------------------------------
# dataset-level reporting


@dataclass(frozen=True)
class BoxStats:
    """Box-plot statistics: linear-interpolation quantiles, 1.5 IQR whiskers."""

    mean: float
    std: float
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    n_outliers: int


def box_stats(values: Sequence[float]) -> BoxStats:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values to aggregate")
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    return BoxStats(
        mean=float(v.mean()),
        std=float(v.std()),
        median=float(med),
        q1=float(q1),
        q3=float(q3),
        whisker_lo=float(inside.min()),
        whisker_hi=float(inside.max()),
        n_outliers=int(v.size - inside.size),
    )


@dataclass(frozen=True)
class SampleEval:
    """Per-sample segmentation and line-detection scores."""

    dice: float
    ahd_mm: float
    match: MatchReport


@dataclass(frozen=True)
class MetricReport:
    """Per-sample records plus the aggregate statistics reported on datasets."""

    samples: tuple[SampleEval, ...]
    dice_stats: BoxStats
    ahd_stats: BoxStats
    precision: float
    recall: float
    f1: float


def evaluate_dataset(
    predictions: Sequence[tuple[BinaryMask, LineSet | Sequence[Line]]],
    ground_truth: Sequence[tuple[BinaryMask, LineSet | Sequence[Line]]],
    shape: tuple[int, int],
    spacing: float,
    ea_accept: float = 0.9,
) -> MetricReport:
    """Dice, Hausdorff, and line matching over paired samples.

    Precision/recall are macro-averaged over samples; the aggregate F1 is the
    harmonic mean of those averages.
    """
    if len(predictions) != len(ground_truth):
        raise ValueError(
            f"length mismatch: {len(predictions)} predictions vs "
            f"{len(ground_truth)} ground-truth samples"
        )
    evals = []
    for (pred_mask, pred_lines), (gt_mask, gt_lines) in zip(predictions, ground_truth):
        evals.append(
            SampleEval(
                dice=dice(pred_mask, gt_mask),
                ahd_mm=avg_hausdorff_mm(pred_mask, gt_mask, spacing),
                match=match_lines(pred_lines, gt_lines, shape, ea_accept),
            )
        )
    p = float(np.mean([e.match.precision for e in evals]))
    r = float(np.mean([e.match.recall for e in evals]))
    return MetricReport(
        samples=tuple(evals),
        dice_stats=box_stats([e.dice for e in evals]),
        ahd_stats=box_stats([e.ahd_mm for e in evals]),
        precision=p,
        recall=r,
        f1=2.0 * p * r / (p + r) if p + r > 0 else 0.0,
    )
