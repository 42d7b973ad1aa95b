import numpy as np
import pytest
import scipy.signal

from lenscoder import optics, slm, tensorio
from lenscoder.errors import FormatError, ResolutionTooCoarse, UnsupportedDegree


def brute_rasterize(state, field_dims, pitch_m, channel):
    """Direct geometric oracle: loop every field pixel against every aperture."""
    geom = state.geometry
    h, w = field_dims
    ys = optics.grid_coords(h, pitch_m)
    xs = optics.grid_coords(w, pitch_m)
    rows = geom.row_centers()
    cols = geom.col_centers()
    weights = state.weights.reshape(geom.n_rows, geom.n_cols)
    out = np.zeros((h, w))
    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            for r in range(geom.n_rows):
                if geom.color_pattern[r] != channel:
                    continue
                if abs(y - rows[r]) > geom.subpixel_size[0] / 2:
                    continue
                for c in range(geom.n_cols):
                    if abs(x - cols[c]) <= geom.subpixel_size[1] / 2:
                        out[i, j] = weights[r, c]
    return out


class TestGeometry:
    def test_fill_factor(self):
        geom = slm.SlmGeometry(6, 4)
        fy, fx = geom.fill_factor_per_axis
        assert fy == pytest.approx(0.82, abs=0.01)
        assert fx == pytest.approx(0.82, abs=0.01)

    def test_sensor_extent(self):
        sensor = slm.SensorGeometry()
        ext = sensor.extent
        assert ext[0] == pytest.approx(4.712e-3, abs=1e-6)
        assert ext[1] == pytest.approx(6.287e-3, abs=1e-6)

    def test_active_subpixels_80_percent(self):
        assert slm.active_subpixels(slm.SensorGeometry(), 0.8) == (51, 22)

    def test_active_subpixels_full_coverage_rows(self):
        rows, cols = slm.active_subpixels(slm.SensorGeometry(), 1.0)
        assert rows == 64
        assert cols >= 22  # the full-width count exceeds the cropped 22

    def test_active_subpixels_tiny_coverage_clamps(self):
        assert slm.active_subpixels(slm.SensorGeometry(), 1e-9) == (1, 1)

    def test_centers_on_lattice_centered(self):
        geom = slm.SlmGeometry(5, 4)
        rows = geom.row_centers()
        assert rows.mean() == pytest.approx(0.0, abs=1e-18)
        assert np.allclose(np.diff(rows), geom.pixel_pitch[0])

    def test_json_override(self, tmp_path):
        path = tmp_path / "geom.json"
        path.write_text(
            '{"n_rows": 3, "n_cols": 2, "subpixel_size": [1e-4, 1e-4],'
            ' "pixel_pitch": [2e-4, 2e-4], "color_pattern": [0, 1, 2]}'
        )
        geom = slm.SlmGeometry.from_json(path)
        assert geom.n_rows == 3 and geom.pixel_pitch == (2e-4, 2e-4)


class TestRasterize:
    def setup_method(self):
        self.geom = slm.SlmGeometry(6, 4)
        self.dims = (64, 48)
        self.pitch = 0.02e-3  # well below both aperture dimensions

    def test_all_transparent_area_fraction(self):
        state = slm.SlmState(self.geom, np.full(self.geom.count, 50.0))
        active_rows = self.geom.n_rows * self.geom.pixel_pitch[0]
        active_cols = self.geom.n_cols * self.geom.pixel_pitch[1]
        mask = slm.rasterize_mask(state, self.dims, self.pitch, channel=0)
        frac = mask.sum() * self.pitch**2 / (active_rows * active_cols)
        fy, fx = self.geom.fill_factor_per_axis
        expected = fy * fx / 3.0  # fill factor x one-of-three color duty
        assert frac == pytest.approx(expected, rel=0.08)

    def test_zero_weights_zero_mask(self):
        state = slm.SlmState(self.geom, np.full(self.geom.count, -60.0))
        mask = slm.rasterize_mask(state, self.dims, self.pitch, channel=1)
        assert np.max(mask) < 1e-15

    def test_single_subpixel_rectangle(self):
        theta = np.full(self.geom.count, -60.0)
        k = 1 * self.geom.n_cols + 2  # row 1 (green), col 2
        theta[k] = 60.0
        state = slm.SlmState(self.geom, theta)
        mask = slm.rasterize_mask(state, self.dims, self.pitch, channel=1)
        ref = brute_rasterize(state, self.dims, self.pitch, channel=1)
        assert np.allclose(mask, ref)
        ys, xs = np.nonzero(mask > 0.5)
        height = (ys.max() - ys.min() + 1) * self.pitch
        width = (xs.max() - xs.min() + 1) * self.pitch
        assert abs(height - self.geom.subpixel_size[0]) <= self.pitch
        assert abs(width - self.geom.subpixel_size[1]) <= self.pitch

    def test_matches_bruteforce_random_weights(self):
        rng = np.random.default_rng(0)
        state = slm.random_slm_state(self.geom, rng)
        for channel in range(3):
            mask = slm.rasterize_mask(state, self.dims, self.pitch, channel)
            ref = brute_rasterize(state, self.dims, self.pitch, channel)
            assert np.allclose(mask, ref)

    def test_linear_in_weights(self):
        rng = np.random.default_rng(1)
        w1 = rng.random(self.geom.count)
        w2 = rng.random(self.geom.count)
        fp = slm.footprint_maps(self.geom, self.dims, self.pitch)
        colors = np.asarray(self.geom.color_pattern)

        def scatter(w):
            return slm.scatter_weights(
                w.reshape(self.geom.n_rows, self.geom.n_cols), *fp, colors, 0
            )

        lhs = scatter(2.0 * w1 + 3.0 * w2)
        rhs = 2.0 * scatter(w1) + 3.0 * scatter(w2)
        assert np.array_equal(lhs, rhs)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        geom = slm.SlmGeometry(3, 2)
        dims = (30, 24)
        pitch = 0.03e-3
        theta = rng.normal(size=geom.count)
        upstream = rng.normal(size=dims)
        fp = slm.footprint_maps(geom, dims, pitch)
        colors = np.asarray(geom.color_pattern)
        grad = slm.gather_grad(upstream, *fp, colors, 0, geom.n_rows, geom.n_cols)
        grad = grad.ravel() * slm.sigmoid_grad(theta)

        def value(t):
            st = slm.SlmState(geom, t)
            return np.sum(slm.rasterize_mask(st, dims, pitch, 0) * upstream)

        eps = 1e-6
        for k in range(geom.count):
            tp, tm = theta.copy(), theta.copy()
            tp[k] += eps
            tm[k] -= eps
            fd = (value(tp) - value(tm)) / (2 * eps)
            assert grad[k] == pytest.approx(fd, abs=1e-6)

    def test_too_coarse_raises(self):
        state = slm.SlmState(self.geom, np.zeros(self.geom.count))
        with pytest.raises(ResolutionTooCoarse):
            # pitch larger than the fine aperture axis leaves gaps
            slm.rasterize_mask(state, (10, 10), 0.5e-3, channel=0)


class TestMls:
    def test_length63_balance(self):
        seq = slm.mls_sequence(6)
        assert seq.size == 63
        assert int(seq.sum()) == 32

    def test_balance_all_degrees(self):
        for n in range(2, 17):
            seq = slm.mls_sequence(n)
            assert int(seq.sum()) == 2 ** (n - 1), n

    def test_autocorrelation_two_valued(self):
        seq = slm.mls_sequence(3)
        pm = 2 * seq.astype(int) - 1
        # brute-force circular autocorrelation oracle
        ac = [int(np.sum(pm * np.roll(pm, k))) for k in range(7)]
        assert ac[0] == 7
        assert all(v == -1 for v in ac[1:])

    def test_scipy_agreement_on_statistics(self):
        ours = slm.mls_sequence(6)
        ref = scipy.signal.max_len_seq(6)[0]
        assert ours.size == ref.size and ours.sum() == ref.sum()

    def test_unsupported_degree(self):
        with pytest.raises(UnsupportedDegree):
            slm.mls_sequence(1)
        with pytest.raises(UnsupportedDegree):
            slm.mls_sequence(17)


class TestCodedAperture:
    def test_separable_rows(self):
        m = slm.coded_aperture_mask()
        assert m.shape == (126, 126)
        pattern = None
        for row in m:
            if row.any():
                if pattern is None:
                    pattern = row
                assert np.array_equal(row, pattern)
            else:
                assert not row.any()

    def test_ones_count(self):
        assert int(slm.coded_aperture_mask().sum()) == 64**2

    def test_transpose_symmetry_rank_one(self):
        m = slm.coded_aperture_mask()
        assert np.array_equal(m, m.T)
        assert np.linalg.matrix_rank(m) == 1

    def test_feature_size_on_sensor(self):
        # 126 cells of 30 um span 80% of the sensor height
        sensor = slm.SensorGeometry()
        assert 126 * slm.CODED_APERTURE_FEATURE_M == pytest.approx(
            0.8 * sensor.extent[0], rel=0.01
        )

    def test_rasterized_extent(self):
        m = slm.coded_aperture_mask()
        field = slm.rasterize_coded_aperture(m, (256, 256), 20e-6)
        ys = np.nonzero(field.any(axis=1))[0]
        span = (ys.max() - ys.min() + 1) * 20e-6
        assert span == pytest.approx(126 * 30e-6, rel=0.02)


class TestMeasuredPsf:
    def test_negative_clamped_and_normalized(self, tmp_path):
        rng = np.random.default_rng(3)
        raw = rng.normal(size=(8, 8, 3))
        path = tmp_path / "m.lct"
        tensorio.write_tensor(path, raw)
        psf = slm.load_measured_psf(path)
        assert np.all(psf >= 0)
        assert np.allclose(psf.sum(axis=(0, 1)), 1.0)

    def test_roundtrip_synthetic(self, tmp_path):
        rng = np.random.default_rng(4)
        psf = rng.random((6, 6, 3))
        psf /= psf.sum(axis=(0, 1))
        path = tmp_path / "p.lct"
        tensorio.write_tensor(path, psf)
        assert np.allclose(slm.load_measured_psf(path), psf, atol=1e-15)

    def test_pfm_ingestion(self, tmp_path):
        rng = np.random.default_rng(5)
        psf = rng.random((6, 6)).astype(np.float32)
        path = tmp_path / "p.pfm"
        tensorio.write_pfm(path, psf)
        got = slm.load_measured_psf(path)
        assert got.shape == (6, 6, 1)
        assert np.allclose(got[:, :, 0], psf / psf.sum(), atol=1e-7)

    def test_unknown_format(self, tmp_path):
        path = tmp_path / "x.bin"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(FormatError):
            slm.load_measured_psf(path)
