import math

import numpy as np
import pytest

from colliseg.grid import HoughGeometry, HoughSpace, ImageGrid
from colliseg.operators import (
    GaussianKernelSpec,
    finite_difference_check,
    gaussian_smooth,
    gaussian_smooth_adjoint,
    gaussian_smooth_array,
    hough_adjoint,
    hough_forward,
    sobel,
    sobel_adjoint,
)

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def dense_correlate_replicate(data, kernel):
    """Oracle: direct per-pixel correlation with replicate padding."""
    kh, kw = kernel.shape
    ry, rx = kh // 2, kw // 2
    h, w = data.shape
    out = np.zeros_like(data, dtype=float)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-ry, ry + 1):
                for dx in range(-rx, rx + 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    acc += kernel[dy + ry, dx + rx] * data[yy, xx]
            out[y, x] = acc
    return out


def naive_hough(data, geometry):
    """Oracle: per-pixel, per-theta accumulation, one vote per theta bin."""
    h, w = data.shape
    acc = np.zeros((geometry.n_theta, geometry.n_rho))
    thetas = geometry.theta_centers()
    for y in range(h):
        for x in range(w):
            v = data[y, x]
            for k in range(geometry.n_theta):
                rho = x * math.cos(thetas[k]) + y * math.sin(thetas[k])
                j = int(math.floor((rho - geometry.rho_min) / geometry.rho_bin_width))
                j = min(max(j, 0), geometry.n_rho - 1)
                acc[k, j] += v
    return acc


# ---------------------------------------------------------------------------
# Sobel


def test_sobel_rejects_small_images():
    with pytest.raises(ValueError):
        sobel(ImageGrid(np.zeros((2, 5))))


def test_sobel_constant_image_is_flat():
    out = sobel(ImageGrid(np.full((6, 6), 3.7)))
    assert np.allclose(out.magnitude.data, 0.0, atol=1e-12)


def test_sobel_ramp_interior_response():
    # horizontal unit ramp: hand correlation of the 3x3 kernel gives gx = 8
    x = np.tile(np.arange(8.0), (8, 1))
    out = sobel(ImageGrid(x))
    assert np.allclose(out.gx.data[1:-1, 1:-1], 8.0)
    assert np.allclose(out.gy.data[1:-1, 1:-1], 0.0)


def test_sobel_step_localization():
    # vertical 0|1 step at column c: response confined to columns c-1, c
    c = 5
    img = np.zeros((9, 12))
    img[:, c:] = 1.0
    mag = sobel(ImageGrid(img)).magnitude.data
    nonzero_cols = sorted(set(np.nonzero(mag)[1].tolist()))
    assert nonzero_cols == [c - 1, c]


def test_sobel_matches_dense_oracle():
    rng = np.random.default_rng(42)
    img = rng.random((10, 13))
    out = sobel(ImageGrid(img))
    assert np.allclose(out.gx.data, dense_correlate_replicate(img, SOBEL_X), atol=1e-12)
    assert np.allclose(out.gy.data, dense_correlate_replicate(img, SOBEL_X.T), atol=1e-12)


def test_sobel_magnitude_shift_invariant():
    rng = np.random.default_rng(3)
    img = rng.random((8, 8))
    m1 = sobel(ImageGrid(img)).magnitude.data
    m2 = sobel(ImageGrid(img + 11.0)).magnitude.data
    assert np.allclose(m1, m2, atol=1e-9)


def test_sobel_adjoint_dot_product():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((7, 9))
    gx_bar = rng.standard_normal((7, 9))
    gy_bar = rng.standard_normal((7, 9))
    out = sobel(ImageGrid(x))
    lhs = float((out.gx.data * gx_bar).sum() + (out.gy.data * gy_bar).sum())
    rhs = float((x * sobel_adjoint(gx_bar, gy_bar)).sum())
    assert abs(lhs - rhs) < 1e-9


# ---------------------------------------------------------------------------
# Gaussian smoothing


def test_gaussian_spec_validation():
    with pytest.raises(ValueError):
        GaussianKernelSpec(sigma=0.0)
    spec = GaussianKernelSpec(sigma=1.0)
    assert spec.radius == 3
    assert spec.weights().sum() == pytest.approx(1.0, abs=1e-15)


def test_gaussian_impulse_response_equals_kernel():
    spec = GaussianKernelSpec(sigma=1.5)
    r = spec.radius
    n = 4 * r + 1
    img = np.zeros((n, n))
    img[n // 2, n // 2] = 1.0
    out = gaussian_smooth_array(img, spec)
    w = spec.weights()
    kernel2d = np.outer(w, w)
    assert np.allclose(out[n // 2 - r : n // 2 + r + 1, n // 2 - r : n // 2 + r + 1], kernel2d, atol=1e-15)


def test_gaussian_constant_fixed_point():
    out = gaussian_smooth(ImageGrid(np.full((9, 9), 2.5)), GaussianKernelSpec(2.0))
    assert np.allclose(out.data, 2.5, atol=1e-12)


def test_gaussian_matches_dense_oracle():
    rng = np.random.default_rng(11)
    img = rng.random((16, 16))
    spec = GaussianKernelSpec(1.5)
    w = spec.weights()
    ref = dense_correlate_replicate(img, np.outer(w, w))
    out = gaussian_smooth_array(img, spec)
    assert np.max(np.abs(out - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_gaussian_preserves_interior_mass():
    spec = GaussianKernelSpec(1.0)
    img = np.zeros((24, 24))
    img[8:16, 8:16] = np.random.default_rng(0).random((8, 8))
    out = gaussian_smooth_array(img, spec)
    assert out.sum() == pytest.approx(img.sum(), rel=1e-9)


def test_gaussian_adjoint_dot_product():
    rng = np.random.default_rng(21)
    spec = GaussianKernelSpec(2.0)
    x = rng.standard_normal((9, 14))
    y = rng.standard_normal((9, 14))
    lhs = float((gaussian_smooth_array(x, spec) * y).sum())
    rhs = float((x * gaussian_smooth_adjoint(y, spec)).sum())
    assert abs(lhs - rhs) < 1e-10


# ---------------------------------------------------------------------------
# Hough transform


def test_hough_zero_image():
    geo = HoughGeometry.for_image(8, 8)
    h = hough_forward(ImageGrid(np.zeros((8, 8))), geo)
    assert not h.data.any()


def test_hough_single_pixel_votes_once_per_theta():
    geo = HoughGeometry.for_image(16, 16)
    img = np.zeros((16, 16))
    img[5, 11] = 1.0
    h = hough_forward(ImageGrid(img), geo)
    thetas = geo.theta_centers()
    for k in range(geo.n_theta):
        row = h.data[k]
        nz = np.nonzero(row)[0]
        assert len(nz) == 1 and row[nz[0]] == 1.0
        rho = 11 * math.cos(thetas[k]) + 5 * math.sin(thetas[k])
        expected_j = int(math.floor((rho - geo.rho_min) / geo.rho_bin_width))
        assert nz[0] == expected_j


def test_hough_matches_naive_oracle_exactly():
    rng = np.random.default_rng(31)
    geo = HoughGeometry.for_image(16, 16)
    for _ in range(5):
        img = rng.random((16, 16))
        mine = hough_forward(ImageGrid(img), geo).data
        ref = naive_hough(img, geo)
        assert np.array_equal(mine, ref)


def test_hough_mass_conservation():
    rng = np.random.default_rng(5)
    img = rng.random((20, 14))
    geo = HoughGeometry.for_image(14, 20)
    h = hough_forward(ImageGrid(img), geo)
    assert h.data.sum() == pytest.approx(geo.n_theta * img.sum(), rel=1e-12)


def test_hough_linearity():
    rng = np.random.default_rng(6)
    geo = HoughGeometry.for_image(12, 12)
    x = rng.random((12, 12))
    y = rng.random((12, 12))
    lin = hough_forward(ImageGrid(2.0 * x + 3.0 * y), geo).data
    sep = 2.0 * hough_forward(ImageGrid(x), geo).data + 3.0 * hough_forward(ImageGrid(y), geo).data
    assert np.max(np.abs(lin - sep)) <= 1e-12 * max(np.max(np.abs(sep)), 1.0)
    # integer images accumulate exactly
    xi = np.floor(x * 10)
    yi = np.floor(y * 10)
    assert np.array_equal(
        hough_forward(ImageGrid(xi + yi), geo).data,
        hough_forward(ImageGrid(xi), geo).data + hough_forward(ImageGrid(yi), geo).data,
    )


def test_hough_range_too_small_raises():
    geo = HoughGeometry(n_theta=18, n_rho=10, rho_min=-4.0, rho_max=4.0)
    with pytest.raises(ValueError, match="rho range too small"):
        hough_forward(ImageGrid(np.ones((16, 16))), geo)


def test_hough_adjoint_single_cell_spreads_on_line():
    geo = HoughGeometry.for_image(16, 16)
    data = np.zeros((geo.n_theta, geo.n_rho))
    k, j = 45, geo.n_rho // 2 + 8
    data[k, j] = 1.0
    img = hough_adjoint(HoughSpace(geo, data), (16, 16)).data
    thetas = geo.theta_centers()
    for y in range(16):
        for x in range(16):
            rho = x * math.cos(thetas[k]) + y * math.sin(thetas[k])
            jj = int(math.floor((rho - geo.rho_min) / geo.rho_bin_width))
            assert img[y, x] == (1.0 if jj == j else 0.0)


def test_hough_adjoint_dot_product():
    rng = np.random.default_rng(17)
    for n in (8, 16, 24):
        geo = HoughGeometry.for_image(n, n)
        for _ in range(10):
            x = rng.standard_normal((n, n))
            y = rng.standard_normal((geo.n_theta, geo.n_rho))
            lhs = float((hough_forward(ImageGrid(x), geo).data * y).sum())
            rhs = float((x * hough_adjoint(HoughSpace(geo, y), (n, n)).data).sum())
            assert abs(lhs - rhs) <= 1e-9 * np.linalg.norm(x) * np.linalg.norm(y)


def test_hough_adjoint_zero_and_shape_mismatch():
    geo = HoughGeometry.for_image(8, 8)
    img = hough_adjoint(HoughSpace(geo, np.zeros((geo.n_theta, geo.n_rho))), (8, 8))
    assert not img.data.any()
    with pytest.raises(ValueError, match="inconsistent"):
        hough_adjoint(HoughSpace(geo, np.zeros((geo.n_theta, geo.n_rho))), (64, 64))


# ---------------------------------------------------------------------------
# finite differences


def test_fd_check_sobel_energy():
    rng = np.random.default_rng(2)
    x0 = rng.random((8, 8))

    def f(a):
        return float((sobel(ImageGrid(a)).magnitude.data ** 2).sum())

    def grad(a):
        out = sobel(ImageGrid(a))
        return sobel_adjoint(2.0 * out.gx.data, 2.0 * out.gy.data)

    report = finite_difference_check(f, grad, x0, step=1e-4, tolerance=1e-4)
    assert report.passed, report


def test_fd_check_gaussian_energy():
    rng = np.random.default_rng(4)
    spec = GaussianKernelSpec(1.5)
    x0 = rng.random((8, 8))

    def f(a):
        return float((gaussian_smooth_array(a, spec) ** 2).sum())

    def grad(a):
        return gaussian_smooth_adjoint(2.0 * gaussian_smooth_array(a, spec), spec)

    report = finite_difference_check(f, grad, x0, step=1e-4, tolerance=1e-6)
    assert report.passed, report


def test_fd_check_hough_energy():
    rng = np.random.default_rng(8)
    geo = HoughGeometry.for_image(8, 8)
    x0 = rng.random((8, 8))

    def f(a):
        return float((hough_forward(ImageGrid(a), geo).data ** 2).sum())

    def grad(a):
        return 2.0 * hough_adjoint(hough_forward(ImageGrid(a), geo), (8, 8)).data

    report = finite_difference_check(f, grad, x0, step=1e-4, tolerance=1e-6)
    assert report.passed, report
