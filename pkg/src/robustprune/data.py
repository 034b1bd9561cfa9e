"""Dataset ingestion: synthetic blob generator, CSV, and IDX parsers.

All inputs are normalized into [0, 1]; splits are deterministic functions
of the seed.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    """Malformed dataset file or descriptor."""


@dataclass
class Dataset:
    inputs: np.ndarray  # (n, c, h, w) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    split: str

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise DataFormatError(
                f"{len(self.inputs)} inputs but {len(self.labels)} labels"
            )
        if self.inputs.size and (self.inputs.min() < 0.0 or self.inputs.max() > 1.0):
            raise DataFormatError("inputs must lie in [0, 1] after normalization")

    def __len__(self) -> int:
        return len(self.labels)

    def batches(self, batch_size: int, rng: np.random.Generator | None = None):
        """Yield (inputs, labels) batches, shuffled when an RNG is given."""
        idx = np.arange(len(self))
        if rng is not None:
            rng.shuffle(idx)
        for i in range(0, len(idx), batch_size):
            sel = idx[i : i + batch_size]
            yield self.inputs[sel], self.labels[sel]


def synthetic_blobs(n: int, size: int = 16, classes: int = 2, noise: float = 0.15,
                    seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Class-balanced images with one Gaussian blob whose location encodes the class."""
    if classes < 2:
        raise DataFormatError(f"need at least 2 classes, got {classes}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    labels = np.tile(np.arange(classes), n // classes + 1)[:n]
    rng.shuffle(labels)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    centers = [
        (size * (0.25 + 0.5 * ((c // 2) % 2)), size * (0.25 + 0.5 * (c % 2)))
        for c in range(classes)
    ]
    images = np.empty((n, 1, size, size))
    for i, c in enumerate(labels):
        cy, cx = centers[c]
        cy += rng.normal(0, size * 0.06)
        cx += rng.normal(0, size * 0.06)
        width = size * rng.uniform(0.10, 0.16)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
        img = 0.75 * blob + rng.normal(0, noise, size=(size, size))
        images[i, 0] = np.clip(img, 0.0, 1.0)
    return images, labels.astype(np.int64)


def _split(inputs: np.ndarray, labels: np.ndarray, seed: int,
           test_fraction: float) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(13,)))
    idx = rng.permutation(len(labels))
    n_test = int(round(test_fraction * len(labels)))
    test_idx, train_idx = idx[:n_test], idx[n_test:]
    return (
        Dataset(inputs[train_idx], labels[train_idx], "train"),
        Dataset(inputs[test_idx], labels[test_idx], "test"),
    )


def load_csv(path, classes: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Rows of ``label,pixel,...`` with pixels in [0, 255]; square grayscale images."""
    rows = []
    labels = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise DataFormatError(f"{path}: non-numeric cell in row {lineno}") from exc
            label = values[0]
            if label != int(label) or label < 0:
                raise DataFormatError(f"{path}: invalid label {label} in row {lineno}")
            if classes is not None and int(label) >= classes:
                raise DataFormatError(
                    f"{path}: label {int(label)} out of range (classes={classes}) in row {lineno}"
                )
            pixels = np.array(values[1:])
            if pixels.size == 0:
                raise DataFormatError(f"{path}: no pixels in row {lineno}")
            if pixels.min() < 0 or pixels.max() > 255:
                raise DataFormatError(f"{path}: pixel outside [0, 255] in row {lineno}")
            side = int(np.sqrt(pixels.size))
            if side * side != pixels.size:
                raise DataFormatError(f"{path}: row {lineno} is not a square image")
            rows.append(pixels.reshape(1, side, side) / 255.0)
            labels.append(int(label))
    if not rows:
        raise DataFormatError(f"{path}: empty dataset")
    return np.stack(rows), np.array(labels, dtype=np.int64)


def load_idx(images_path, labels_path, classes: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Big-endian IDX pair: magic 0x803 image file plus magic 0x801 label file."""
    with open(images_path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise DataFormatError(f"{images_path}: truncated IDX header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise DataFormatError(
                f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        raw = fh.read(count * rows * cols)
        if len(raw) != count * rows * cols:
            raise DataFormatError(f"{images_path}: truncated pixel data")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(count, 1, rows, cols) / 255.0
    with open(labels_path, "rb") as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise DataFormatError(f"{labels_path}: truncated IDX header")
        magic, n_labels = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise DataFormatError(
                f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        raw = fh.read(n_labels)
        if len(raw) != n_labels:
            raise DataFormatError(f"{labels_path}: truncated label data")
        labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    if n_labels != count:
        raise DataFormatError(f"IDX pair mismatch: {count} images vs {n_labels} labels")
    if classes is not None and labels.size and labels.max() >= classes:
        raise DataFormatError(f"{labels_path}: label {labels.max()} out of range (classes={classes})")
    return images, labels


def ingest(descriptor: dict, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Build (train, test) from a dataset descriptor.

    Descriptor keys: ``kind`` in {synthetic, csv, idx}; synthetic takes
    n/size/classes/noise, csv takes path, idx takes images/labels paths.
    ``test_fraction`` (default 0.2) controls the deterministic split.
    """
    kind = descriptor.get("kind")
    test_fraction = float(descriptor.get("test_fraction", 0.2))
    classes = int(descriptor["classes"]) if "classes" in descriptor else None
    if kind == "synthetic":
        inputs, labels = synthetic_blobs(
            n=int(descriptor.get("n", 2000)),
            size=int(descriptor.get("size", 16)),
            classes=int(descriptor.get("classes", 2)),
            noise=float(descriptor.get("noise", 0.15)),
            seed=seed,
        )
    elif kind == "csv":
        inputs, labels = load_csv(Path(descriptor["path"]), classes)
    elif kind == "idx":
        inputs, labels = load_idx(Path(descriptor["images"]), Path(descriptor["labels"]), classes)
    else:
        raise DataFormatError(f"unknown dataset kind {kind!r}")
    return _split(inputs, labels, seed, test_fraction)
