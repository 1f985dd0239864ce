import json

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from decorrmil import (
    Bag,
    BagDataset,
    DataError,
    SyntheticConfig,
    compute_bag_label,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from decorrmil.errors import ConfigError


def small_config(**kw):
    base = dict(
        n_bags_train=10,
        n_bags_test=6,
        k_range=(15, 25),
        n=8,
        pos_fraction=0.3,
        cluster_sep=3.0,
        confound_strength=1.0,
        confound_flip=True,
        seed=7,
    )
    base.update(kw)
    return SyntheticConfig(**base)


class TestBagLabelRule:
    def test_all_negative(self):
        assert compute_bag_label([0, 0, 0]) == 0

    def test_single_positive(self):
        assert compute_bag_label([0, 1, 0]) == 1

    def test_all_positive(self):
        assert compute_bag_label([1, 1, 1]) == 1

    def test_empty_bag_errors(self):
        with pytest.raises(ValueError, match="empty bag"):
            compute_bag_label([])

    def test_non_binary_errors(self):
        with pytest.raises(ValueError):
            compute_bag_label([0, 2])


class TestBagValidation:
    def test_latent_labels_must_match_bag_label(self):
        feats = np.zeros((3, 4), dtype=np.float32)
        with pytest.raises(DataError) as err:
            Bag("b", feats, label=1, latent_labels=[0, 0, 0])
        assert err.value.code == "label_mismatch"

    def test_non_finite_rejected(self):
        feats = np.zeros((2, 4), dtype=np.float32)
        feats[1, 2] = np.nan
        with pytest.raises(DataError) as err:
            Bag("b", feats, label=0)
        assert err.value.code == "non_finite"

    def test_latent_length_checked(self):
        feats = np.zeros((3, 4), dtype=np.float32)
        with pytest.raises(DataError) as err:
            Bag("b", feats, label=1, latent_labels=[1, 0])
        assert err.value.code == "dimension_mismatch"


class TestSyntheticGenerator:
    def test_full_pos_fraction_fills_positive_bags(self):
        cfg = small_config(pos_fraction=1.0, k_range=(5, 5))
        ds = generate_synthetic(cfg)
        for bag in ds.bags:
            if bag.label == 1:
                assert bag.latent_labels.sum() == 5

    def test_same_seed_is_bitwise_identical(self):
        a = generate_synthetic(small_config())
        b = generate_synthetic(small_config())
        assert len(a.bags) == len(b.bags)
        for x, y in zip(a.bags, b.bags):
            assert x.bag_id == y.bag_id
            assert x.label == y.label
            assert np.array_equal(x.features, y.features)
            assert np.array_equal(x.latent_labels, y.latent_labels)

    def test_different_seed_differs(self):
        a = generate_synthetic(small_config(seed=1))
        b = generate_synthetic(small_config(seed=2))
        assert not np.array_equal(a.bags[0].features, b.bags[0].features)

    def test_labels_consistent_with_rule(self):
        ds = generate_synthetic(small_config())
        for bag in ds.bags:
            assert bag.label == compute_bag_label(bag.latent_labels)

    def test_features_finite(self):
        ds = generate_synthetic(small_config())
        for bag in ds.bags:
            assert np.isfinite(bag.features).all()

    def test_confound_flip_reverses_association(self):
        cfg = small_config(confound_strength=5.0, cluster_sep=0.0)
        ds = generate_synthetic(cfg)
        for bags, positive_shift in ((ds.train_bags, 1), (ds.test_bags, 0)):
            means = {0: [], 1: []}
            for bag in bags:
                means[bag.label].append(bag.features[:, -1].mean())
            shifted = 1 if positive_shift else 0
            assert np.mean(means[shifted]) > np.mean(means[1 - shifted]) + 3.0

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigError):
            small_config(pos_fraction=0.0).validate()
        with pytest.raises(ConfigError):
            small_config(k_range=(0, 5)).validate()
        with pytest.raises(ConfigError):
            small_config(cluster_sep=-1.0).validate()

    def test_instances_linearly_separable_at_wide_separation(self):
        # Oracle: logistic regression on latent instance labels. At four
        # sigma between cluster means the Bayes error is below 0.025, so
        # held-out instance accuracy must clear 0.97.
        cfg = SyntheticConfig(
            n_bags_train=40,
            n_bags_test=20,
            k_range=(60, 100),
            n=64,
            pos_fraction=0.5,
            cluster_sep=4.0,
            confound_strength=0.0,
            confound_flip=False,
            seed=11,
        )
        ds = generate_synthetic(cfg)

        def stack(bags):
            X = np.concatenate([b.features for b in bags])
            y = np.concatenate([b.latent_labels for b in bags])
            return X, y

        Xtr, ytr = stack(ds.train_bags)
        Xte, yte = stack(ds.test_bags)
        oracle = LogisticRegression(max_iter=2000).fit(Xtr, ytr)
        assert oracle.score(Xte, yte) > 0.97


class TestDatasetIO:
    def test_round_trip(self, tmp_path):
        ds = generate_synthetic(small_config())
        save_dataset(ds, tmp_path / "ds")
        loaded = load_dataset(tmp_path / "ds")
        assert loaded.n == ds.n
        assert loaded.task_mode == ds.task_mode
        for a, b in zip(ds.bags, loaded.bags):
            assert a.bag_id == b.bag_id
            assert a.split == b.split
            assert a.label == b.label
            assert np.array_equal(a.features, b.features)
            assert np.array_equal(a.latent_labels, b.latent_labels)

    def test_hand_written_manifest(self, tmp_path):
        root = tmp_path / "mini"
        root.mkdir()
        rng = np.random.default_rng(0)
        for name, k in (("a", 3), ("b", 3)):
            feats = rng.standard_normal((k, 4)).astype("<f4")
            (root / f"{name}.f32").write_bytes(feats.tobytes())
        manifest = {
            "version": 1,
            "n": 4,
            "task_mode": "benign_malignant",
            "bags": [
                {"id": "a", "split": "train", "bag_label": 0, "K": 3, "features_file": "a.f32"},
                {"id": "b", "split": "test", "bag_label": 0, "K": 3, "features_file": "b.f32"},
            ],
        }
        (root / "manifest.json").write_text(json.dumps(manifest))
        ds = load_dataset(root)
        assert len(ds.bags) == 2 and ds.n == 4

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError) as err:
            load_dataset(tmp_path / "nope")
        assert err.value.code == "missing_file"

    def test_declared_rows_mismatch(self, tmp_path):
        root = tmp_path / "bad"
        root.mkdir()
        feats = np.zeros((2, 4), dtype="<f4")
        (root / "a.f32").write_bytes(feats.tobytes())
        manifest = {
            "version": 1,
            "n": 4,
            "task_mode": "benign_malignant",
            "bags": [{"id": "a", "split": "train", "bag_label": 0, "K": 3, "features_file": "a.f32"}],
        }
        (root / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(DataError) as err:
            load_dataset(root)
        assert err.value.code == "dimension_mismatch"

    def test_label_inconsistent_with_rule(self, tmp_path):
        root = tmp_path / "bad2"
        root.mkdir()
        (root / "a.f32").write_bytes(np.zeros((3, 4), dtype="<f4").tobytes())
        manifest = {
            "version": 1,
            "n": 4,
            "task_mode": "benign_malignant",
            "bags": [
                {
                    "id": "a",
                    "split": "train",
                    "bag_label": 1,
                    "K": 3,
                    "features_file": "a.f32",
                    "latent_labels": [0, 0, 0],
                }
            ],
        }
        (root / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(DataError) as err:
            load_dataset(root)
        assert err.value.code == "label_mismatch"

    def test_unknown_task_mode(self, tmp_path):
        root = tmp_path / "bad3"
        root.mkdir()
        manifest = {"version": 1, "n": 4, "task_mode": "regression", "bags": []}
        (root / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(DataError) as err:
            load_dataset(root)
        assert err.value.code == "unknown_task_mode"

    def test_non_finite_features_rejected(self, tmp_path):
        root = tmp_path / "bad4"
        root.mkdir()
        feats = np.zeros((2, 4), dtype="<f4")
        feats[0, 0] = np.inf
        (root / "a.f32").write_bytes(feats.tobytes())
        manifest = {
            "version": 1,
            "n": 4,
            "task_mode": "benign_malignant",
            "bags": [{"id": "a", "split": "train", "bag_label": 0, "K": 2, "features_file": "a.f32"}],
        }
        (root / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(DataError) as err:
            load_dataset(root)
        assert err.value.code == "non_finite"
