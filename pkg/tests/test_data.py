import struct

import numpy as np
import pytest

from deligan.data import (DataError, DataFormatError, Dataset, Mode, ToySpec, bimodal, load_mnist_idx,
                          read_dataset_csv, sample_toy, subset_balanced, to_pixels, unimodal,
                          write_dataset_csv, write_idx_images, write_idx_labels)
from deligan.nets import ConfigError


def raw_idx_fixture(tmp_path, images: np.ndarray, labels: np.ndarray):
    """Writes IDX bytes by hand so the reader is checked against the file format, not our writer."""
    img, lab = tmp_path / "img.idx", tmp_path / "lab.idx"
    img.write_bytes(b"\x00\x00\x08\x03" + struct.pack(">III", *images.shape) + images.astype(np.uint8).tobytes())
    lab.write_bytes(b"\x00\x00\x08\x01" + struct.pack(">I", len(labels)) + labels.astype(np.uint8).tobytes())
    return img, lab


class TestToy:
    def test_unimodal_mean(self):
        d = sample_toy(unimodal(), 10_000, np.random.default_rng(0))
        assert np.all(np.abs(d.samples.mean(0)) < 0.05)
        assert np.all(np.abs(d.samples.std(0) - 0.5) < 0.02)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_bimodal_label_counts(self, seed):
        n = 10_000
        d = sample_toy(bimodal(), n, np.random.default_rng(seed))
        counts = np.bincount(d.labels, minlength=2)
        assert np.all(np.abs(counts - n / 2) <= 3 * np.sqrt(n / 4))

    def test_bimodal_labels_match_positions(self, rng):
        d = sample_toy(bimodal(), 2000, rng)
        assert np.array_equal(d.samples[:, 0] > 0, d.labels == 1)

    def test_single_row(self, rng):
        d = sample_toy(bimodal(), 1, rng)
        assert d.samples.shape == (1, 2) and len(d) == 1

    def test_zero_rows_rejected(self, rng):
        with pytest.raises(ConfigError):
            sample_toy(unimodal(), 0, rng)

    def test_deterministic(self):
        a = sample_toy(bimodal(), 50, np.random.default_rng(3))
        b = sample_toy(bimodal(), 50, np.random.default_rng(3))
        assert np.array_equal(a.samples, b.samples)

    @pytest.mark.parametrize("modes", [
        [],
        [Mode((0, 0), (1, 1), 0.7)],
        [Mode((0, 0, 0), (1, 1, 1), 1.0)],
        [Mode((0, 0), (0, 1), 1.0)],
        [Mode((0, 0), (1, 1), 1.5), Mode((1, 1), (1, 1), -0.5)],
    ])
    def test_invalid_spec(self, modes):
        with pytest.raises(ConfigError):
            ToySpec(modes)

    def test_spec_dict_round_trip(self):
        spec = bimodal()
        assert ToySpec.from_dict(spec.to_dict()) == spec

    def test_malformed_dict(self):
        with pytest.raises(ConfigError):
            ToySpec.from_dict({"modes": [{"mean": [0, 0]}]})


class TestIdx:
    def test_hand_written_fixture_loads_pixel_exact(self, tmp_path):
        images = np.arange(2 * 28 * 28).reshape(2, 28, 28) % 256
        img, lab = raw_idx_fixture(tmp_path, images, np.array([7, 3]))
        d = load_mnist_idx(img, lab)
        assert d.samples.shape == (2, 784) and d.labels.tolist() == [7, 3]
        assert d.samples.min() == -1.0 and d.samples.max() == 1.0
        assert np.array_equal(to_pixels(d.samples), images)

    def test_writer_round_trip(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(3, 28, 28))
        write_idx_images(tmp_path / "i", images)
        write_idx_labels(tmp_path / "l", [0, 5, 9])
        d = load_mnist_idx(tmp_path / "i", tmp_path / "l")
        assert np.array_equal(to_pixels(d.samples), images) and d.labels.tolist() == [0, 5, 9]

    def test_bad_magic(self, tmp_path):
        img, lab = raw_idx_fixture(tmp_path, np.zeros((1, 28, 28)), np.array([0]))
        with pytest.raises(DataFormatError, match="magic"):
            load_mnist_idx(lab, img)

    def test_truncated_body(self, tmp_path):
        img, lab = raw_idx_fixture(tmp_path, np.zeros((2, 28, 28)), np.array([0, 1]))
        img.write_bytes(img.read_bytes()[:-10])
        with pytest.raises(DataFormatError, match="expected"):
            load_mnist_idx(img, lab)

    def test_truncated_header(self, tmp_path):
        (tmp_path / "x").write_bytes(b"\x00\x00\x08")
        with pytest.raises(DataFormatError, match="header"):
            load_mnist_idx(tmp_path / "x", tmp_path / "x")

    def test_count_mismatch(self, tmp_path):
        img, lab = raw_idx_fixture(tmp_path, np.zeros((2, 28, 28)), np.array([4]))
        with pytest.raises(DataFormatError, match="2 images but 1 labels"):
            load_mnist_idx(img, lab)


class TestSubset:
    @staticmethod
    def labelled(rng, per_class=80, classes=10):
        labels = np.repeat(np.arange(classes), per_class)
        rng.shuffle(labels)
        return Dataset(rng.normal(size=(len(labels), 4)), labels)

    def test_fifty_per_class(self, rng):
        sub = subset_balanced(self.labelled(rng), 50, rng)
        assert len(sub) == 500
        assert np.bincount(sub.labels).tolist() == [50] * 10

    def test_rows_come_from_source_with_matching_labels(self, rng):
        d = self.labelled(rng)
        sub = subset_balanced(d, 5, rng)
        for x, y in zip(sub.samples, sub.labels):
            hits = np.flatnonzero((d.samples == x).all(1))
            assert len(hits) == 1 and d.labels[hits[0]] == y
        assert len(np.unique(sub.samples, axis=0)) == len(sub)

    def test_zero_per_class_is_empty(self, rng):
        sub = subset_balanced(self.labelled(rng), 0, rng)
        assert sub.samples.shape == (0, 4) and len(sub.labels) == 0

    def test_deterministic(self, rng):
        d = self.labelled(rng)
        a = subset_balanced(d, 10, np.random.default_rng(2))
        b = subset_balanced(d, 10, np.random.default_rng(2))
        assert np.array_equal(a.samples, b.samples)

    def test_too_few_members(self, rng):
        with pytest.raises(DataError, match="need 81"):
            subset_balanced(self.labelled(rng), 81, rng)

    def test_unlabelled(self, rng):
        with pytest.raises(DataError):
            subset_balanced(Dataset(np.zeros((3, 2))), 1, rng)


class TestCsv:
    def test_round_trip_with_labels(self, tmp_path, rng):
        d = Dataset(rng.normal(size=(6, 3)), np.array([0, 1, 2, 0, 1, 2]))
        write_dataset_csv(d, tmp_path / "d.csv")
        back = read_dataset_csv(tmp_path / "d.csv")
        assert np.array_equal(back.samples, d.samples) and np.array_equal(back.labels, d.labels)
        assert (tmp_path / "d.csv").read_text().splitlines()[0] == "x0,x1,x2,label"

    def test_header_only_gives_empty(self, tmp_path):
        (tmp_path / "e.csv").write_text("x0,x1\n")
        d = read_dataset_csv(tmp_path / "e.csv")
        assert d.samples.shape == (0, 2) and d.labels is None

    def test_garbage_value(self, tmp_path):
        (tmp_path / "g.csv").write_text("x0,x1\n1.0,abc\n")
        with pytest.raises(DataFormatError):
            read_dataset_csv(tmp_path / "g.csv")

    def test_empty_file(self, tmp_path):
        (tmp_path / "z.csv").write_text("")
        with pytest.raises(DataFormatError):
            read_dataset_csv(tmp_path / "z.csv")


def test_dataset_label_count_checked():
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 2)), np.array([0, 1]))
