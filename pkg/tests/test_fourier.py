import numpy as np
import pytest

from lenscoder import fourier
from lenscoder.errors import DimensionMismatch


def direct_convolve_same(img, kernel):
    """O(N^4) nested-loop oracle for the centered linear convolution."""
    h, w = img.shape
    cy, cx = h // 2, w // 2
    out = np.zeros_like(img)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for p in range(h):
                for q in range(w):
                    ky, kx = i + cy - p, j + cx - q
                    if 0 <= ky < h and 0 <= kx < w:
                        acc += img[p, q] * kernel[ky, kx]
            out[i, j] = acc
    return out


def reference_resize(img, out_h, out_w):
    """Direct per-pixel bilinear formula (align-corners-false, clamped)."""
    h, w = img.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
            sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = sy - y0, sx - x0
            out[i, j] = (
                img[y0, x0] * (1 - fy) * (1 - fx)
                + img[y0, x1] * (1 - fy) * fx
                + img[y1, x0] * fy * (1 - fx)
                + img[y1, x1] * fy * fx
            )
    return out


class TestFft:
    def test_constant_grid_dc_only(self):
        spec = fourier.fft2(np.ones((4, 4), dtype=complex))
        assert spec[0, 0] == pytest.approx(16.0)
        spec[0, 0] = 0.0
        assert np.abs(spec).max() < 1e-12

    def test_roundtrip_inverse_identity(self):
        rng = np.random.default_rng(0)
        g = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        back = fourier.ifft2(fourier.fft2(g))
        assert np.max(np.abs(back - g)) / np.max(np.abs(g)) < 1e-12

    def test_delta_gives_flat_spectrum(self):
        g = np.zeros((4, 4), dtype=complex)
        g[0, 0] = 1.0
        assert np.allclose(fourier.fft2(g), 1.0, atol=1e-14)

    def test_parseval(self):
        rng = np.random.default_rng(1)
        for shape in [(4, 4), (5, 7), (8, 3), (16, 16)]:
            g = rng.normal(size=shape) + 1j * rng.normal(size=shape)
            lhs = np.sum(np.abs(g) ** 2)
            rhs = np.sum(np.abs(fourier.fft2(g)) ** 2) / (shape[0] * shape[1])
            assert abs(lhs - rhs) / lhs < 1e-10


class TestLinearConvolve:
    def test_identity_kernel(self):
        rng = np.random.default_rng(2)
        img = rng.normal(size=(6, 6))
        kernel = np.zeros((6, 6))
        kernel[3, 3] = 1.0  # center pixel of an even grid is H//2
        assert np.allclose(fourier.linear_convolve(img, kernel), img, atol=1e-12)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(3)
        img = rng.normal(size=(5, 5))
        kernel = rng.normal(size=(5, 5))
        expected = direct_convolve_same(img, kernel)
        got = fourier.linear_convolve(img, kernel)
        assert np.max(np.abs(got - expected)) < 1e-9

    def test_bruteforce_all_small_sizes(self):
        rng = np.random.default_rng(4)
        for h in range(1, 9):
            for w in range(1, 9):
                img = rng.normal(size=(h, w))
                kernel = rng.normal(size=(h, w))
                expected = direct_convolve_same(img, kernel)
                got = fourier.linear_convolve(img, kernel)
                assert np.max(np.abs(got - expected)) < 1e-9, (h, w)

    def test_zero_kernel(self):
        img = np.random.default_rng(5).normal(size=(4, 4))
        out = fourier.linear_convolve(img, np.zeros((4, 4)))
        assert np.all(out == 0)

    def test_linearity(self):
        rng = np.random.default_rng(6)
        x, y, k = (rng.normal(size=(7, 7)) for _ in range(3))
        a, b = 2.5, -1.25
        lhs = fourier.linear_convolve(a * x + b * y, k)
        rhs = a * fourier.linear_convolve(x, k) + b * fourier.linear_convolve(y, k)
        assert np.max(np.abs(lhs - rhs)) < 1e-10

    def test_commutativity(self):
        rng = np.random.default_rng(7)
        x, k = rng.normal(size=(6, 8)), rng.normal(size=(6, 8))
        lhs = fourier.linear_convolve(x, k)
        rhs = fourier.linear_convolve(k, x)
        assert np.max(np.abs(lhs - rhs)) < 1e-10

    def test_shape_mismatch_raises(self):
        with pytest.raises(DimensionMismatch):
            fourier.linear_convolve(np.zeros((4, 4)), np.zeros((5, 5)))

    def test_multichannel_independent(self):
        rng = np.random.default_rng(8)
        img = rng.normal(size=(5, 5, 3))
        ker = rng.normal(size=(5, 5, 3))
        out = fourier.linear_convolve(img, ker)
        for c in range(3):
            ref = fourier.linear_convolve(img[:, :, c], ker[:, :, c])
            assert np.allclose(out[:, :, c], ref)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(9)
        imgs = rng.normal(size=(4, 6, 6))
        ker = rng.normal(size=(6, 6))
        batched = fourier.convolve_batch(imgs, ker)
        for i in range(4):
            assert np.allclose(batched[i], fourier.linear_convolve(imgs[i], ker))


class TestBilinearResize:
    def test_constant_maps_to_constant(self):
        img = np.full((5, 7), 3.0)
        for dims in [(2, 3), (10, 14), (1, 1), (5, 7)]:
            out = fourier.bilinear_resize(img, *dims)
            assert np.allclose(out, 3.0, atol=1e-12)

    def test_monotone_columns(self):
        img = np.array([[0.0, 1.0], [0.0, 1.0]])
        out = fourier.bilinear_resize(img, 2, 4)
        assert np.all(np.diff(out, axis=1) >= -1e-12)

    def test_matches_reference_formula(self):
        rng = np.random.default_rng(10)
        ramp = np.arange(16, dtype=float).reshape(4, 4)
        assert np.allclose(
            fourier.bilinear_resize(ramp, 2, 2), reference_resize(ramp, 2, 2)
        )
        for shape, dims in [((4, 4), (2, 2)), ((5, 9), (3, 4)), ((3, 3), (7, 5))]:
            img = rng.normal(size=shape)
            assert np.allclose(
                fourier.bilinear_resize(img, *dims),
                reference_resize(img, *dims),
                atol=1e-12,
            )

    def test_output_dims_with_channels(self):
        img = np.zeros((6, 8, 3))
        assert fourier.bilinear_resize(img, 3, 4).shape == (3, 4, 3)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(11)
        imgs = rng.normal(size=(3, 6, 8))
        out = fourier.bilinear_resize_batch(imgs, 3, 4)
        for i in range(3):
            assert np.allclose(out[i], fourier.bilinear_resize(imgs[i], 3, 4))
