import numpy as np
import pytest

from dimcam.synth import (
    LabeledDataset,
    SynthConfig,
    SynthError,
    _injection_plan,
    export_dataset,
    generate,
    import_dataset,
    merge_as_test,
    split,
)


def small_cfg(**kw):
    base = dict(D=6, n=80, instances_per_class=5, pattern_length=16, seed=3)
    base.update(kw)
    return SynthConfig(**base)


class TestConfig:
    def test_pattern_must_fit(self):
        with pytest.raises(SynthError, match="pattern_length"):
            SynthConfig(n=50, pattern_length=50)

    def test_injected_dims_bounded(self):
        with pytest.raises(SynthError, match="injected_dimension_count"):
            SynthConfig(D=2, injected_dimension_count=3)

    def test_type2_needs_room_for_disjoint_windows(self):
        with pytest.raises(SynthError, match="type2"):
            SynthConfig(D=4, n=100, pattern_length=40, injected_dimension_count=3, dataset_type="type2")

    def test_type_name_checked(self):
        with pytest.raises(SynthError, match="dataset_type"):
            SynthConfig(dataset_type="type3")


class TestType1:
    def test_mask_cell_counts(self):
        ds = generate(small_cfg())
        for inst in ds.instances:
            if inst.class_label == 1:
                assert inst.mask.sum() == 2 * 16
            else:
                assert inst.mask.sum() == 0

    def test_masked_dimensions_differ_from_background(self):
        ds = generate(small_cfg(noise_scale=0.05))
        inst = next(s for s in ds.instances if s.class_label == 1)
        masked_dims = np.flatnonzero(inst.mask.any(axis=1))
        assert len(masked_dims) == 2

    def test_balance_exact(self):
        ds = generate(small_cfg(instances_per_class=7))
        assert ds.class_counts() == {0: 7, 1: 7}

    def test_regeneration_bit_identical(self):
        a = generate(small_cfg())
        b = generate(small_cfg())
        for x, y in zip(a.instances, b.instances):
            np.testing.assert_array_equal(x.values, y.values)
            np.testing.assert_array_equal(x.mask, y.mask)

    def test_mask_prevalence_example(self):
        cfg = SynthConfig(D=10, n=400, instances_per_class=1, pattern_length=64, seed=0)
        ds = generate(cfg)
        inst = next(s for s in ds.instances if s.class_label == 1)
        assert inst.mask.mean() == pytest.approx(0.032)


class TestType2:
    def test_class1_shares_one_start(self):
        ds = generate(small_cfg(dataset_type="type2"))
        for inst in ds.instances:
            if inst.class_label != 1:
                continue
            starts = set()
            for dim in np.flatnonzero(inst.mask.any(axis=1)):
                starts.add(int(np.flatnonzero(inst.mask[dim])[0]))
            assert len(starts) == 1

    def test_class0_plans_are_pairwise_non_overlapping(self):
        cfg = small_cfg(dataset_type="type2", injected_dimension_count=3)
        rng = np.random.default_rng(0)
        for _ in range(50):
            plan = _injection_plan(rng, cfg, class_label=0)
            starts = sorted(s for _, s in plan)
            assert len(set(starts)) == len(starts)
            for a, b in zip(starts, starts[1:]):
                assert b - a >= cfg.pattern_length

    def test_class0_masks_empty(self):
        ds = generate(small_cfg(dataset_type="type2"))
        for inst in ds.instances:
            if inst.class_label == 0:
                assert inst.mask.sum() == 0

    def test_per_dimension_marginals_match_across_classes(self):
        # discriminance is co-location only: per-dimension statistics are
        # class-independent up to sampling error
        cfg = SynthConfig(
            D=6, n=120, instances_per_class=100, pattern_length=20, dataset_type="type2", seed=5
        )
        ds = generate(cfg)
        per_class = {0: [], 1: []}
        for inst in ds.instances:
            per_class[inst.class_label].append(inst.values.mean(axis=1))
        for stat in (np.mean,):
            a = np.array(per_class[0])
            b = np.array(per_class[1])
            diff = np.abs(a.mean(axis=0) - b.mean(axis=0))
            se = np.sqrt(a.var(axis=0) / len(a) + b.var(axis=0) / len(b))
            assert np.all(diff < 3 * se + 1e-9)


class TestSplit:
    def test_eighty_twenty_stratified(self):
        ds = generate(small_cfg(instances_per_class=50))
        out = split(ds, train_fraction=0.8, seed=1)
        assert len(out.train_idx) == 80 and len(out.val_idx) == 20
        train_labels = [out.instances[i].class_label for i in out.train_idx]
        val_labels = [out.instances[i].class_label for i in out.val_idx]
        assert train_labels.count(0) == train_labels.count(1) == 40
        assert val_labels.count(0) == val_labels.count(1) == 10

    def test_split_deterministic(self):
        ds = generate(small_cfg())
        a = split(ds, seed=4)
        b = split(ds, seed=4)
        assert a.train_idx == b.train_idx and a.val_idx == b.val_idx

    def test_splits_disjoint_and_cover_pool(self):
        ds = generate(small_cfg(instances_per_class=9))
        out = split(ds, train_fraction=0.7, seed=2)
        assert set(out.train_idx).isdisjoint(out.val_idx)
        assert sorted(out.train_idx + out.val_idx) == list(range(18))

    def test_split_leaves_test_untouched(self):
        pool = generate(small_cfg())
        test = generate(small_cfg(instances_per_class=3, seed=99))
        merged = merge_as_test(pool, test)
        out = split(merged, seed=0)
        assert out.test_idx == merged.test_idx
        assert set(out.train_idx + out.val_idx).isdisjoint(out.test_idx)

    def test_fraction_bounds(self):
        ds = generate(small_cfg())
        with pytest.raises(SynthError, match="train_fraction"):
            split(ds, train_fraction=1.0)

    def test_overlapping_split_indices_rejected(self):
        ds = generate(small_cfg())
        with pytest.raises(SynthError, match="more than one split"):
            LabeledDataset(instances=ds.instances, train_idx=[0, 1], val_idx=[1])


class TestMergeAsTest:
    def test_offsets_and_labels(self):
        pool = generate(small_cfg())
        test = generate(small_cfg(instances_per_class=2, seed=11))
        merged = merge_as_test(pool, test)
        assert len(merged.instances) == 10 + 4
        assert merged.test_idx == [10, 11, 12, 13]
        assert merged.test_config == test.config
        labels = [merged.instances[i].class_label for i in merged.test_idx]
        assert labels.count(0) == labels.count(1) == 2


class TestRoundTrip:
    def test_export_import_equality(self, tmp_path):
        ds = split(generate(small_cfg()), seed=1)
        directory = str(tmp_path / "data")
        export_dataset(ds, directory)
        back = import_dataset(directory)
        assert back.config == ds.config
        assert back.train_idx == ds.train_idx
        assert back.val_idx == ds.val_idx
        assert back.test_idx == ds.test_idx
        for a, b in zip(back.instances, ds.instances):
            assert a.class_label == b.class_label
            np.testing.assert_array_equal(a.values, b.values)
            np.testing.assert_array_equal(a.mask, b.mask)

    def test_missing_mask_rejected(self, tmp_path):
        ds = generate(small_cfg(instances_per_class=2))
        directory = str(tmp_path / "data")
        export_dataset(ds, directory)
        (tmp_path / "data" / "instance_0000.mask.csv").unlink()
        with pytest.raises(SynthError, match="mask"):
            import_dataset(directory)

    def test_missing_instance_rejected(self, tmp_path):
        ds = generate(small_cfg(instances_per_class=2))
        directory = str(tmp_path / "data")
        export_dataset(ds, directory)
        (tmp_path / "data" / "instance_0001.csv").unlink()
        with pytest.raises(SynthError, match="missing file"):
            import_dataset(directory)

    def test_label_count_mismatch_rejected(self, tmp_path):
        import json
        import os

        ds = generate(small_cfg(instances_per_class=2))
        directory = str(tmp_path / "data")
        export_dataset(ds, directory)
        manifest_path = os.path.join(directory, "manifest.json")
        manifest = json.load(open(manifest_path))
        manifest["labels"] = manifest["labels"][:-1]
        json.dump(manifest, open(manifest_path, "w"))
        with pytest.raises(SynthError, match="labels"):
            import_dataset(directory)

    def test_no_manifest_rejected(self, tmp_path):
        with pytest.raises(SynthError, match="manifest"):
            import_dataset(str(tmp_path))
