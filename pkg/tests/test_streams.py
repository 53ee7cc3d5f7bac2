import numpy as np
import pytest

from imexreg.streams import (AugmentConfig, Dataset, Sample, augment,
                             load_csv_dataset, make_class_il_stream,
                             make_gaussian_dataset, make_gcil_stream,
                             save_csv_dataset)


@pytest.fixture(scope="module")
def dataset():
    return make_gaussian_dataset(num_classes=10, dim=6, train_per_class=30,
                                 test_per_class=12, seed=3)


class TestGaussianDataset:
    def test_shapes_and_labels(self, dataset):
        assert dataset.x_train.shape == (300, 6)
        assert dataset.x_test.shape == (120, 6)
        assert set(dataset.y_train.tolist()) == set(range(10))
        assert np.all(np.isfinite(dataset.x_train))

    def test_seeded(self):
        a = make_gaussian_dataset(4, 5, 10, 5, seed=9)
        b = make_gaussian_dataset(4, 5, 10, 5, seed=9)
        np.testing.assert_array_equal(a.x_train, b.x_train)
        c = make_gaussian_dataset(4, 5, 10, 5, seed=10)
        assert not np.array_equal(a.x_train, c.x_train)


class TestClassIlStream:
    def test_canonical_split(self, dataset):
        stream = make_class_il_stream(dataset, 5, 2)
        assert stream.task_classes() == [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]
        assert stream.scenario == "class-il"

    def test_test_sets_partition_full_test_set(self, dataset):
        stream = make_class_il_stream(dataset, 5, 2)
        total = sum(t.x_test.shape[0] for t in stream.tasks)
        assert total == dataset.x_test.shape[0]
        seen = np.concatenate([t.y_test for t in stream.tasks])
        assert np.bincount(seen, minlength=10).tolist() == [12] * 10

    def test_class_sets_disjoint_and_train_partitioned(self, dataset):
        stream = make_class_il_stream(dataset, 5, 2, seed=4, shuffle_classes=True)
        all_classes = [c for t in stream.tasks for c in t.classes]
        assert sorted(all_classes) == list(range(10))
        total_train = sum(t.n_train for t in stream.tasks)
        assert total_train == dataset.x_train.shape[0]

    def test_same_seed_same_composition(self, dataset):
        a = make_class_il_stream(dataset, 5, 2, seed=8, shuffle_classes=True)
        b = make_class_il_stream(dataset, 5, 2, seed=8, shuffle_classes=True)
        assert a.task_classes() == b.task_classes()
        for ta, tb in zip(a.tasks, b.tasks):
            np.testing.assert_array_equal(ta.x_train, tb.x_train)

    def test_insufficient_classes(self, dataset):
        with pytest.raises(ValueError, match="classes"):
            make_class_il_stream(dataset, 6, 2)

    def test_sample_accessor(self, dataset):
        stream = make_class_il_stream(dataset, 5, 2)
        s = stream.tasks[1].sample_at(0)
        assert isinstance(s, Sample)
        assert s.task_id == 1 and s.label in (2, 3)


class TestGcilStream:
    def test_uniform_budget_met_exactly(self, dataset):
        stream = make_gcil_stream(dataset, num_tasks=20, samples_per_task=25,
                                  max_classes=5, distribution="uniform", seed=1)
        assert stream.num_tasks == 20
        for t in stream.tasks:
            assert t.n_train == 25
            assert len(t.classes) <= 5
            counts = np.bincount(t.y_train, minlength=10)
            present = counts[counts > 0]
            assert present.max() - present.min() <= 1

    def test_classes_recur_across_tasks(self, dataset):
        stream = make_gcil_stream(dataset, 20, 25, 5, "uniform", seed=2)
        all_classes = [c for t in stream.tasks for c in t.classes]
        assert len(all_classes) > len(set(all_classes))

    def test_longtail_rounding_fixture(self, dataset):
        # 2 classes, budget 100, weights (1, 1/2) -> shares (2/3, 1/3) of 100;
        # largest-remainder apportionment gives (67, 33)
        from imexreg.streams import _apportion
        counts = _apportion(np.array([1.0, 0.5]), 100)
        assert counts.tolist() == [67, 33]

    def test_longtail_counts_decrease(self, dataset):
        stream = make_gcil_stream(dataset, 10, 28, 5, "longtail", seed=5)
        for t in stream.tasks:
            # counts in drawn-class order follow the decreasing profile
            drawn = [int((t.y_train == c).sum()) for c in t.classes]
            assert all(a >= b for a, b in zip(drawn, drawn[1:]))
            assert sum(drawn) == 28

    def test_max_classes_one_gives_single_class_tasks(self, dataset):
        stream = make_gcil_stream(dataset, 8, 10, 1, "uniform", seed=6)
        for t in stream.tasks:
            assert len(t.classes) == 1
            assert len(set(t.y_train.tolist())) == 1

    def test_budget_exceeding_class_pool_names_class(self, dataset):
        with pytest.raises(ValueError, match=r"class \d+"):
            make_gcil_stream(dataset, 5, 100, 1, "uniform", seed=7)

    def test_deterministic_under_seed(self, dataset):
        a = make_gcil_stream(dataset, 6, 20, 4, "longtail", seed=9)
        b = make_gcil_stream(dataset, 6, 20, 4, "longtail", seed=9)
        for ta, tb in zip(a.tasks, b.tasks):
            np.testing.assert_array_equal(ta.x_train, tb.x_train)
            assert ta.classes == tb.classes


class TestAugment:
    def test_all_zero_config_is_identity(self):
        cfg = AugmentConfig(noise_std=0, mask_rate=0, jitter_scale=0, standard_noise_std=0)
        x = np.random.default_rng(0).normal(size=(4, 5))
        rng = np.random.default_rng(1)
        np.testing.assert_array_equal(augment(x, cfg, "contrastive", rng), x)
        np.testing.assert_array_equal(augment(x, cfg, "standard", rng), x)

    def test_full_mask_zeroes_everything(self):
        cfg = AugmentConfig(noise_std=0, mask_rate=1.0, jitter_scale=0, standard_noise_std=0)
        x = np.random.default_rng(2).normal(size=(3, 7))
        out = augment(x, cfg, "contrastive", np.random.default_rng(3))
        np.testing.assert_array_equal(out, np.zeros_like(x))

    def test_noise_std_moment(self):
        cfg = AugmentConfig(noise_std=0.1, mask_rate=0, jitter_scale=0)
        x = np.zeros(4)
        rng = np.random.default_rng(4)
        draws = np.stack([augment(x, cfg, "contrastive", rng) for _ in range(10_000)])
        sample_std = draws.std(axis=0, ddof=1)
        assert np.all(np.abs(sample_std - 0.1) <= 0.005)

    def test_standard_mode_only_weak_noise(self):
        cfg = AugmentConfig(noise_std=5.0, mask_rate=1.0, jitter_scale=0.9,
                            standard_noise_std=0.01)
        x = np.ones(6)
        out = augment(x, cfg, "standard", np.random.default_rng(5))
        assert np.abs(out - x).max() < 0.1

    def test_distinct_rng_states_give_distinct_views(self):
        cfg = AugmentConfig(noise_std=0.1, mask_rate=0, jitter_scale=0)
        x = np.ones(8)
        rng = np.random.default_rng(6)
        views = [augment(x, cfg, "contrastive", rng) for _ in range(100)]
        for a, b in zip(views, views[1:]):
            assert not np.array_equal(a, b)

    def test_rejects_bad_config(self):
        with pytest.raises(ValueError):
            AugmentConfig(mask_rate=1.5)
        with pytest.raises(ValueError):
            AugmentConfig(noise_std=-1)

    def test_rejects_bad_mode(self):
        with pytest.raises(ValueError, match="mode"):
            augment(np.ones(3), AugmentConfig(), "weird", np.random.default_rng(0))


class TestCsvDataset:
    def test_roundtrip(self, tmp_path, dataset):
        train, test = tmp_path / "train.csv", tmp_path / "test.csv"
        save_csv_dataset(train, test, dataset)
        loaded = load_csv_dataset(train, test)
        assert loaded.num_classes == dataset.num_classes
        np.testing.assert_array_equal(loaded.x_train, dataset.x_train)
        np.testing.assert_array_equal(loaded.y_train, dataset.y_train)
        np.testing.assert_array_equal(loaded.x_test, dataset.x_test)

    def test_header_format(self, tmp_path, dataset):
        train, test = tmp_path / "train.csv", tmp_path / "test.csv"
        save_csv_dataset(train, test, dataset)
        header = train.read_text().splitlines()[0]
        assert header == "300,6,10"

    def test_bad_row_rejected(self, tmp_path):
        train = tmp_path / "train.csv"
        train.write_text("2,3,2\n1.0,2.0,3.0,0\n1.0,2.0,1\n")
        with pytest.raises(ValueError, match="row 1"):
            load_csv_dataset(train, train)

    def test_label_out_of_range_rejected(self, tmp_path):
        f = tmp_path / "x.csv"
        f.write_text("1,2,2\n0.0,1.0,5\n")
        with pytest.raises(ValueError, match="labels"):
            load_csv_dataset(f, f)
