import struct

import numpy as np
import pytest

from jldict.data import (LabeledDataset, apply_standardization, augment_minority, load_csv,
                         load_idx, load_idx_images, reindex_labels, standardize,
                         stratified_kfold, synth_clusters, write_idx)
from jldict.errors import InvalidArgument, ParseError


def write_bytes(path, *chunks):
    path.write_bytes(b"".join(chunks))
    return path


class TestIdx:
    def test_fixture(self, tmp_path):
        imgs = np.arange(16, dtype=np.uint8).reshape(4, 2, 2) * 17
        write_idx(tmp_path / "i", tmp_path / "l", imgs, np.array([3, 1, 3, 0], np.uint8))
        ds = load_idx(tmp_path / "i", tmp_path / "l")
        assert ds.Y.shape == (4, 4)
        np.testing.assert_allclose(ds.Y[:, 1], np.array([4, 5, 6, 7]) * 17 / 255.0)
        assert ds.Y.max() <= 1.0 and ds.Y.min() >= 0.0
        np.testing.assert_array_equal(ds.labels, [0, 1, 0, 2])
        assert ds.label_names == (3, 1, 0)

    def test_round_trip(self, tmp_path, rng):
        imgs = rng.integers(0, 256, (30, 5, 7), dtype=np.uint8)
        labels = rng.integers(0, 10, 30).astype(np.uint8)
        write_idx(tmp_path / "i", tmp_path / "l", imgs, labels)
        first = (tmp_path / "i").read_bytes(), (tmp_path / "l").read_bytes()
        ds = load_idx(tmp_path / "i", tmp_path / "l")
        back = np.rint(ds.Y.T * 255).astype(np.uint8).reshape(30, 5, 7)
        names = np.array(ds.label_names, dtype=np.uint8)
        write_idx(tmp_path / "i2", tmp_path / "l2", back, names[ds.labels])
        assert ((tmp_path / "i2").read_bytes(), (tmp_path / "l2").read_bytes()) == first

    def test_count_mismatch(self, tmp_path):
        write_idx(tmp_path / "i", tmp_path / "l", np.zeros((3, 2, 2), np.uint8),
                  np.zeros(3, np.uint8))
        write_bytes(tmp_path / "l", struct.pack(">II", 0x801, 2), b"\0\0")
        with pytest.raises(ParseError, match="labels"):
            load_idx(tmp_path / "i", tmp_path / "l")

    def test_bad_magic(self, tmp_path):
        p = write_bytes(tmp_path / "i", struct.pack(">IIII", 0x802, 1, 2, 2), b"\0" * 4)
        with pytest.raises(ParseError, match="byte offset 0"):
            load_idx_images(p)

    def test_truncated(self, tmp_path):
        p = write_bytes(tmp_path / "i", struct.pack(">IIII", 0x803, 2, 2, 2), b"\0" * 5)
        with pytest.raises(ParseError, match="byte offset 21"):
            load_idx_images(p)

    def test_truncated_header(self, tmp_path):
        p = write_bytes(tmp_path / "i", struct.pack(">II", 0x803, 2))
        with pytest.raises(ParseError, match="byte offset"):
            load_idx_images(p)

    def test_trailing_bytes(self, tmp_path):
        p = write_bytes(tmp_path / "i", struct.pack(">IIII", 0x803, 1, 1, 1), b"\0\0")
        with pytest.raises(ParseError, match="trailing"):
            load_idx_images(p)

    def test_empty_file(self, tmp_path):
        with pytest.raises(ParseError):
            load_idx_images(write_bytes(tmp_path / "i", b""))


class TestCsv:
    def test_fixture(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,label,b\n1,5,2\n3,9,4\n5,5,6\n")
        ds = load_csv(p)
        np.testing.assert_array_equal(ds.Y, [[1, 3, 5], [2, 4, 6]])
        np.testing.assert_array_equal(ds.labels, [0, 1, 0])
        assert ds.label_names == (5, 9)

    def test_first_seen_order(self):
        ids, names = reindex_labels(["z", "a", "z", "m", "a"])
        np.testing.assert_array_equal(ids, [0, 1, 0, 2, 1])
        assert names == ["z", "a", "m"]
        ids2, names2 = reindex_labels(["a", "z", "m"])
        assert names2 == ["a", "z", "m"] and ids2.tolist() == [0, 1, 2]

    def test_ragged(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,label\n1,2,0\n3,0\n")
        with pytest.raises(ParseError, match="line 3"):
            load_csv(p)

    def test_non_numeric(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,label\n1,2,0\n3,x,1\n4,5,1\n")
        with pytest.raises(ParseError, match="line 3"):
            load_csv(p)

    def test_missing_label_column(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ParseError, match="line 1"):
            load_csv(p)

    def test_missing_header(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("")
        with pytest.raises(ParseError):
            load_csv(p)


class TestStandardize:
    def test_moments(self, rng):
        ds = standardize(LabeledDataset(rng.normal(3, 5, (6, 50)), np.zeros(50, int), 1))
        np.testing.assert_allclose(ds.Y.mean(axis=1), 0, atol=1e-8)
        np.testing.assert_allclose(ds.Y.std(axis=1), 1, atol=1e-6)
        assert ds.standardized

    def test_already_standard_and_idempotent(self, rng):
        once = standardize(LabeledDataset(rng.standard_normal((4, 30)), np.zeros(30, int), 1))
        twice = standardize(once)
        np.testing.assert_allclose(twice.Y, once.Y, atol=1e-10)

    def test_constant_feature(self, rng):
        Y = rng.standard_normal((3, 10))
        Y[1] = 7.0
        ds = standardize(LabeledDataset(Y, np.zeros(10, int), 1))
        np.testing.assert_array_equal(ds.Y[1], 0.0)
        assert ds.std[1] == 1.0 and np.all(np.isfinite(ds.Y))

    def test_held_out_uses_training_stats(self, rng):
        train = LabeledDataset(rng.normal(1, 2, (5, 40)), np.zeros(40, int), 1)
        ds = standardize(train)
        test = rng.normal(1, 2, (5, 7))
        mean = train.Y.sum(axis=1) / 40
        std = np.sqrt(((train.Y - mean[:, None]) ** 2).sum(axis=1) / 40)
        np.testing.assert_allclose(apply_standardization(test, ds.mean, ds.std),
                                   (test - mean[:, None]) / std[:, None], atol=1e-12)

    def test_needs_two(self):
        with pytest.raises(InvalidArgument):
            standardize(LabeledDataset(np.zeros((2, 1)), np.zeros(1, int), 1))


class TestFolds:
    def test_balanced_small(self):
        labels = np.repeat([0, 1], 5)
        for _, test in stratified_kfold(labels, 5, seed=0):
            assert sorted(labels[test].tolist()) == [0, 1]

    def test_partition(self, rng):
        labels = rng.integers(0, 4, 103)
        labels[:40] = np.repeat(np.arange(4), 10)
        folds = stratified_kfold(labels, 7, seed=2)
        tests = np.concatenate([t for _, t in folds])
        assert sorted(tests.tolist()) == list(range(103))
        for train, test in folds:
            assert not set(train) & set(test)
            assert len(train) + len(test) == 103

    def test_proportions(self):
        for seed in range(20):
            r = np.random.default_rng(seed)
            labels = r.integers(0, 5, 200)
            k = int(r.integers(2, 8))
            if np.bincount(labels, minlength=5).min() < k:
                continue
            for _, test in stratified_kfold(labels, k, seed):
                for c in range(5):
                    expected = np.sum(labels == c) / k
                    assert abs(np.sum(labels[test] == c) - expected) <= 1

    def test_deterministic(self):
        labels = np.arange(30) % 3
        a, b = stratified_kfold(labels, 3, 4), stratified_kfold(labels, 3, 4)
        for (ta, sa), (tb, sb) in zip(a, b):
            np.testing.assert_array_equal(sa, sb)

    def test_small_class(self):
        with pytest.raises(InvalidArgument, match="class 1"):
            stratified_kfold(np.array([0, 0, 0, 1, 1]), 3)

    def test_one_fold(self):
        with pytest.raises(InvalidArgument):
            stratified_kfold(np.zeros(10, int), 1)


class TestSynth:
    def test_counts(self):
        ds = synth_clusters(8, 3, 17, 5.0, seed=1)
        np.testing.assert_array_equal(ds.class_counts(), [17, 17, 17])
        assert ds.Y.shape == (8, 51)

    def test_separation(self):
        ds = synth_clusters(20, 5, 2000, 10.0, seed=0)
        means = np.stack([ds.Y[:, ds.labels == c].mean(axis=1) for c in range(5)], 1)
        dist = np.linalg.norm(means[:, :, None] - means[:, None, :], axis=0)
        off = dist[~np.eye(5, dtype=bool)]
        np.testing.assert_allclose(off, 10.0, atol=0.3)

    def test_zero_separation(self):
        ds = synth_clusters(6, 3, 10, 0.0, seed=0)
        # all classes share one mean: the noise generator alone determines the data
        ref = np.random.default_rng(0)
        ref.standard_normal((6, 2))
        np.testing.assert_allclose(ds.Y, ref.standard_normal((6, 30)), atol=0)

    def test_nearest_mean_oracle(self):
        full = synth_clusters(64, 10, 200, 20.0, seed=0)
        half = np.arange(full.n_samples) % 2 == 0
        ds, test = full.subset(np.flatnonzero(half)), full.subset(np.flatnonzero(~half))
        means = np.stack([ds.Y[:, ds.labels == c].mean(axis=1) for c in range(10)], 1)
        pred = np.argmin(((test.Y[:, :, None] - means[:, None]) ** 2).sum(0), axis=1)
        assert np.mean(pred == test.labels) >= 0.999

    def test_deterministic(self):
        np.testing.assert_array_equal(synth_clusters(5, 2, 4, 1.0, 3).Y,
                                      synth_clusters(5, 2, 4, 1.0, 3).Y)


class TestAugment:
    def test_unchanged_at_target(self):
        ds = synth_clusters(4, 2, 10, 3.0)
        out = augment_minority(ds, 10)
        np.testing.assert_array_equal(out.Y, ds.Y)

    def test_counts(self):
        ds = synth_clusters(4, 2, 100, 3.0)
        keep = np.concatenate([np.flatnonzero(ds.labels == 0)[:20], np.flatnonzero(ds.labels == 1)])
        small = ds.subset(keep)
        out = augment_minority(small, 100, seed=1)
        assert out.n_samples == small.n_samples + 80
        np.testing.assert_array_equal(out.labels[small.n_samples:], 0)
        np.testing.assert_array_equal(out.Y[:, :small.n_samples], small.Y)

    def test_noise_concentration(self):
        d, sd = 16, 0.05
        ds = synth_clusters(d, 2, 5, 3.0)
        out = augment_minority(ds, 1005, noise_std=sd, seed=0)
        extra = out.Y[:, ds.n_samples:]
        labels = out.labels[ds.n_samples:]
        # distance to the nearest same-class source
        near = []
        for j in range(extra.shape[1]):
            src = ds.Y[:, ds.labels == labels[j]]
            near.append(np.min(np.linalg.norm(src - extra[:, [j]], axis=0)))
        assert np.mean(np.array(near) <= 6 * sd * np.sqrt(d)) >= 0.99

    def test_empty_class(self):
        ds = LabeledDataset(np.zeros((2, 3)), np.array([0, 0, 0]), 2)
        with pytest.raises(InvalidArgument):
            augment_minority(ds, 5)
