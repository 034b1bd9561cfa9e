"""Dataset generation, parsing, normalization, and deterministic splits."""

import struct

import numpy as np
import pytest

from robustprune.data import (
    DataFormatError,
    Dataset,
    ingest,
    load_csv,
    load_idx,
    synthetic_blobs,
)


def test_blobs_balanced_classes():
    _, labels = synthetic_blobs(2000, size=16, classes=2, seed=0)
    counts = np.bincount(labels)
    assert counts[0] == counts[1] == 1000


def test_blobs_values_in_unit_interval():
    images, _ = synthetic_blobs(100, size=16, classes=2, seed=1)
    assert images.min() >= 0.0 and images.max() <= 1.0
    assert images.shape == (100, 1, 16, 16)


def test_blobs_deterministic():
    a, la = synthetic_blobs(50, seed=3)
    b, lb = synthetic_blobs(50, seed=3)
    assert np.array_equal(a, b) and np.array_equal(la, lb)


def test_ingest_synthetic_split():
    train, test = ingest({"kind": "synthetic", "n": 500, "size": 8, "classes": 2,
                          "test_fraction": 0.2}, seed=4)
    assert len(train) == 400 and len(test) == 100
    assert train.split == "train" and test.split == "test"
    train2, test2 = ingest({"kind": "synthetic", "n": 500, "size": 8, "classes": 2,
                            "test_fraction": 0.2}, seed=4)
    assert np.array_equal(train.inputs, train2.inputs)
    assert np.array_equal(test.labels, test2.labels)


def test_csv_roundtrip(tmp_path):
    path = tmp_path / "toy.csv"
    rng = np.random.default_rng(5)
    rows = []
    for _ in range(10):
        label = rng.integers(0, 2)
        pixels = rng.integers(0, 256, size=16)
        rows.append(",".join([str(label)] + [str(p) for p in pixels]))
    path.write_text("\n".join(rows) + "\n")
    images, labels = load_csv(path, classes=2)
    assert images.shape == (10, 1, 4, 4)
    assert images.max() <= 1.0


def test_csv_non_numeric_cell_names_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("0,1,2,3,4\n1,x,2,3,4\n")
    with pytest.raises(DataFormatError, match="row 2"):
        load_csv(path)


def test_csv_label_out_of_range(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("5,0,0,0,0\n")
    with pytest.raises(DataFormatError, match="out of range"):
        load_csv(path, classes=2)


def _write_idx_pair(tmp_path, n=6, side=4, magic_images=0x803, magic_labels=0x801):
    rng = np.random.default_rng(6)
    pixels = rng.integers(0, 256, size=(n, side, side), dtype=np.uint8)
    labels = rng.integers(0, 2, size=n, dtype=np.uint8)
    img_path = tmp_path / "images.idx"
    lab_path = tmp_path / "labels.idx"
    with open(img_path, "wb") as fh:
        fh.write(struct.pack(">IIII", magic_images, n, side, side))
        fh.write(pixels.tobytes())
    with open(lab_path, "wb") as fh:
        fh.write(struct.pack(">II", magic_labels, n))
        fh.write(labels.tobytes())
    return img_path, lab_path, pixels, labels


def test_idx_roundtrip(tmp_path):
    img, lab, pixels, labels = _write_idx_pair(tmp_path)
    images, got = load_idx(img, lab)
    assert np.array_equal(got, labels)
    assert np.allclose(images[:, 0] * 255, pixels)


def test_idx_bad_magic(tmp_path):
    img, lab, _, _ = _write_idx_pair(tmp_path, magic_images=0x807)
    with pytest.raises(DataFormatError, match="magic"):
        load_idx(img, lab)


def test_idx_ingest(tmp_path):
    img, lab, _, _ = _write_idx_pair(tmp_path, n=10)
    train, test = ingest({"kind": "idx", "images": str(img), "labels": str(lab),
                          "classes": 2, "test_fraction": 0.3}, seed=1)
    assert len(train) == 7 and len(test) == 3


def test_unknown_kind_rejected():
    with pytest.raises(DataFormatError, match="unknown dataset kind"):
        ingest({"kind": "tar"}, seed=0)


def test_dataset_validates_range():
    with pytest.raises(DataFormatError):
        Dataset(np.full((2, 1, 2, 2), 1.5), np.zeros(2, dtype=int), "train")


def test_batches_cover_everything():
    train, _ = ingest({"kind": "synthetic", "n": 100, "size": 8, "classes": 2}, seed=9)
    seen = 0
    for x, y in train.batches(32):
        assert len(x) == len(y)
        seen += len(y)
    assert seen == len(train)


def test_batches_shuffle_deterministic():
    train, _ = ingest({"kind": "synthetic", "n": 64, "size": 8, "classes": 2}, seed=9)
    a = [y.copy() for _, y in train.batches(16, np.random.default_rng(3))]
    b = [y.copy() for _, y in train.batches(16, np.random.default_rng(3))]
    for ya, yb in zip(a, b):
        assert np.array_equal(ya, yb)
