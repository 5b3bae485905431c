import numpy as np
import pytest

from dimcam.cam import (
    MTensor,
    average_maps_exact,
    compute_cam,
    compute_ccam,
    compute_dcam,
    dcam_from_mbar,
    export_dcam_csv,
    export_dcam_json,
    export_heatmap_ppm,
    m_transform,
    mu_series,
)
from dimcam.networks import ArchitectureSpec, ModelFormatError, build_model, forward_logits
from dimcam.series import MultivariateSeries, Permutation, build_cube, load_series_csv, sample_permutations


def small_model(family="dcnn", d=4, filters=(4, 6), widths=(3, 3), seed=0, **kw):
    spec = ArchitectureSpec(family=family, conv_filters=filters, kernel_time_width=widths, **kw)
    model = build_model(spec, input_dims=d, seed=seed)
    model.class_labels = [0, 1]
    return model


def random_series(d, n, seed=0):
    return MultivariateSeries(values=np.random.default_rng(seed).standard_normal((d, n)))


class TestCam:
    def test_hand_built_linear_combination(self):
        # filters produce A0 = [1, 2] and A1 = [0, 1]; class-0 weights [1, -1]
        model = small_model("cnn", d=1, filters=(2,), widths=(1,), use_batchnorm=False)
        model.weights["conv0.w"].data = np.array([[[1.0]], [[1.0]]], dtype=np.float32)
        model.weights["conv0.b"].data = np.array([0.0, -1.0], dtype=np.float32)
        model.weights["dense.w"].data = np.array([[1.0, 0.0], [-1.0, 0.0]], dtype=np.float32)
        series = MultivariateSeries(values=np.array([[1.0, 2.0]]))
        cam = compute_cam(model, series, 0)
        np.testing.assert_allclose(cam.values, [1.0, 1.0], atol=1e-7)

    def test_zero_dense_weights_give_zero_map(self):
        model = small_model()
        model.weights["dense.w"].data = np.zeros_like(model.weights["dense.w"].data)
        cube = build_cube(random_series(4, 12), Permutation.identity(4))
        np.testing.assert_array_equal(compute_cam(model, cube, 1).values, 0.0)

    def test_mean_equals_logit_minus_bias(self):
        for seed in range(5):
            model = small_model(seed=seed)
            model.weights["dense.b"].data = np.random.default_rng(seed).standard_normal(2).astype(np.float32)
            cube = build_cube(random_series(4, 25, seed=seed), Permutation.identity(4))
            logits, _ = forward_logits(model, cube)
            for c in (0, 1):
                cam = compute_cam(model, cube, c)
                lhs = logits[c] - model.weights["dense.b"].data[c]
                assert lhs == pytest.approx(cam.values.mean(), rel=1e-4, abs=1e-6)

    def test_ccam_requires_ccnn(self):
        with pytest.raises(ModelFormatError, match="ccnn"):
            compute_ccam(small_model("dcnn"), random_series(4, 10), 0)

    def test_ccam_grid_shape(self):
        model = small_model("ccnn", d=3)
        cam = compute_ccam(model, random_series(3, 15), 1)
        assert cam.values.shape == (3, 15)


class TestMTransform:
    def test_identity_perm_top_left_is_last_row(self):
        grid = np.arange(12, dtype=float).reshape(3, 4)
        out = m_transform(grid, Permutation.identity(3))
        np.testing.assert_array_equal(out[0, 0], grid[2])

    def test_each_row_appears_exactly_d_times(self):
        for d in range(1, 7):
            grid = np.arange(d * 3, dtype=float).reshape(d, 3)
            for perm in sample_permutations(d, 4, seed=d):
                out = m_transform(grid, perm)
                flat = out.reshape(d * d, 3)
                for r in range(d):
                    hits = sum(1 for row in flat if np.array_equal(row, grid[r]))
                    assert hits == d

    def test_constant_grid_constant_output(self):
        out = m_transform(np.full((4, 6), 2.5), Permutation(np.array([2, 0, 3, 1])))
        np.testing.assert_array_equal(out, 2.5)

    def test_shape_guard(self):
        with pytest.raises(ValueError, match="cam grid"):
            m_transform(np.zeros((3, 5)), Permutation.identity(4))


class TestMu:
    def test_constant_tensor(self):
        mbar = MTensor(values=np.full((3, 3, 5), 1.25), contributing_permutations=4, correctly_classified=4)
        np.testing.assert_array_equal(mu_series(mbar), np.full(5, 1.25))

    def test_two_by_two_hand_case(self):
        values = np.array([1.0, 2.0, 3.0, 4.0]).reshape(2, 2, 1)
        assert mu_series(values)[0] == pytest.approx(2.5)

    def test_equals_permutation_averaged_row_mean(self):
        rng = np.random.default_rng(3)
        d, n = 5, 9
        grids = [rng.standard_normal((d, n)) for _ in range(7)]
        perms = sample_permutations(d, 7, seed=1)
        mbar = np.mean([m_transform(g, p) for g, p in zip(grids, perms)], axis=0)
        direct = np.mean([g.mean(axis=0) for g in grids], axis=0)
        np.testing.assert_allclose(mu_series(mbar), direct, rtol=1e-12, atol=1e-12)


class TestDcam:
    def test_single_dimension_gives_zero_map(self):
        model = small_model(d=1)
        result = compute_dcam(model, random_series(1, 20), 0, k=5, seed=2)
        np.testing.assert_array_equal(result.dcam, 0.0)

    def test_zero_dense_weights(self):
        model = small_model(d=3)
        model.weights["dense.w"].data = np.zeros_like(model.weights["dense.w"].data)
        model.weights["dense.b"].data = np.zeros_like(model.weights["dense.b"].data)
        result = compute_dcam(model, random_series(3, 10), 0, k=6, seed=0)
        np.testing.assert_array_equal(result.mbar.values, 0.0)
        np.testing.assert_array_equal(result.dcam, 0.0)
        # logits tie at zero; argmax resolves to class index 0
        assert result.mbar.correctly_classified == 6
        assert result.ng_ratio == 1.0

    def test_constant_mbar_slice_zero_row(self):
        values = np.random.default_rng(0).standard_normal((4, 4, 7))
        values[2] = 0.75
        dcam, _ = dcam_from_mbar(values)
        np.testing.assert_allclose(dcam[2], 0.0, atol=1e-15)
        assert np.abs(dcam[[0, 1, 3]]).max() > 0

    def test_cubic_scaling_of_dense_column(self):
        model = small_model(d=4, seed=6)
        series = random_series(4, 14, seed=6)
        base = compute_dcam(model, series, 1, k=8, seed=3)
        model.weights["dense.w"].data = model.weights["dense.w"].data.copy()
        model.weights["dense.w"].data[:, 1] *= 2.0
        scaled = compute_dcam(model, series, 1, k=8, seed=3)
        np.testing.assert_allclose(scaled.dcam, 8.0 * base.dcam, rtol=1e-9, atol=1e-12)
        if np.abs(base.dcam).max() > 0:
            assert np.unravel_index(np.argmax(scaled.dcam), scaled.dcam.shape) == np.unravel_index(
                np.argmax(base.dcam), base.dcam.shape
            )

    def test_worker_count_does_not_change_bits(self):
        model = small_model(d=5, seed=9)
        series = random_series(5, 18, seed=9)
        one = compute_dcam(model, series, 0, k=20, seed=7, workers=1)
        four = compute_dcam(model, series, 0, k=20, seed=7, workers=4)
        assert np.array_equal(one.mbar.values, four.mbar.values)
        assert np.array_equal(one.dcam, four.dcam)
        assert one.ng_ratio == four.ng_ratio

    def test_same_seed_reproduces_bitwise(self):
        model = small_model(d=4, seed=1)
        series = random_series(4, 12, seed=1)
        a = compute_dcam(model, series, 0, k=9, seed=5)
        b = compute_dcam(model, series, 0, k=9, seed=5)
        assert np.array_equal(a.dcam, b.dcam)

    def test_only_correct_with_no_hits_yields_zeros(self):
        model = small_model(d=3)
        model.weights["dense.w"].data = np.zeros_like(model.weights["dense.w"].data)
        model.weights["dense.b"].data = np.zeros_like(model.weights["dense.b"].data)
        # ties resolve to class 0, so class 1 never matches
        result = compute_dcam(model, random_series(3, 8), 1, k=4, seed=1, only_correct=True)
        assert result.mbar.correctly_classified == 0
        np.testing.assert_array_equal(result.mbar.values, 0.0)

    def test_family_guard(self):
        with pytest.raises(ModelFormatError, match="cube-family"):
            compute_dcam(small_model("cnn"), random_series(4, 10), 0, k=2)

    def test_k_guard(self):
        with pytest.raises(ValueError, match="k must be"):
            compute_dcam(small_model(), random_series(4, 10), 0, k=0)

    def test_dimension_mismatch_guard(self):
        with pytest.raises(ModelFormatError, match="dimensions"):
            compute_dcam(small_model(d=4), random_series(3, 10), 0, k=2)

    def test_ng_ratio_bounds_and_k1(self):
        model = small_model(d=3, seed=2)
        series = random_series(3, 10, seed=2)
        result = compute_dcam(model, series, 0, k=1, seed=0)
        assert result.ng_ratio in (0.0, 1.0)
        pred_class = 0 if result.mbar.correctly_classified == 1 else 1
        again = compute_dcam(model, series, pred_class, k=1, seed=0)
        assert again.ng_ratio == 1.0


def test_average_maps_exact_is_order_invariant():
    rng = np.random.default_rng(4)
    maps = [rng.standard_normal((3, 3, 6)) for _ in range(9)]
    base = average_maps_exact(maps)
    rng.shuffle(maps)
    shuffled = average_maps_exact(maps)
    assert np.array_equal(base, shuffled)


class TestExports:
    def test_csv_round_trip(self, tmp_path):
        values = np.random.default_rng(0).standard_normal((3, 7))
        path = str(tmp_path / "map.csv")
        export_dcam_csv(values, path)
        back = load_series_csv(path)
        np.testing.assert_array_equal(back.values, values)

    def test_json_sidecar_fields(self, tmp_path):
        import json

        model = small_model(d=3, seed=3)
        result = compute_dcam(model, random_series(3, 9, seed=3), 0, k=4, seed=11)
        path = str(tmp_path / "map.json")
        export_dcam_json(result, path, class_label=0, k=4, seed=11)
        payload = json.loads(open(path).read())
        assert payload["k"] == 4
        assert payload["seed"] == 11
        assert payload["class_id"] == 0
        assert 0 <= payload["n_g"] <= 4
        assert payload["dimensions"] == 3
        assert payload["length"] == 9

    def test_ppm_header_and_size(self, tmp_path):
        values = np.random.default_rng(1).standard_normal((4, 10))
        path = str(tmp_path / "map.ppm")
        export_heatmap_ppm(values, path, cell=3)
        raw = open(path, "rb").read()
        header, rest = raw.split(b"\n", 1)
        assert header == b"P6"
        dims, rest = rest.split(b"\n", 1)
        assert dims == b"30 12"
        maxval, pixels = rest.split(b"\n", 1)
        assert maxval == b"255"
        assert len(pixels) == 30 * 12 * 3

    def test_ppm_constant_input_no_nan(self, tmp_path):
        path = str(tmp_path / "flat.ppm")
        export_heatmap_ppm(np.zeros((2, 5)), path)
        assert open(path, "rb").read()[:2] == b"P6"

    def test_ppm_deterministic(self, tmp_path):
        values = np.random.default_rng(2).standard_normal((3, 8))
        p1, p2 = str(tmp_path / "a.ppm"), str(tmp_path / "b.ppm")
        export_heatmap_ppm(values, p1)
        export_heatmap_ppm(values, p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()
