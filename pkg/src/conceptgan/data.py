"""Dataset ingestion: CIFAR-10/100 binary records, a synthetic toy set, batching."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np

PIXELS = 3 * 32 * 32
CIFAR10_RECORD = 1 + PIXELS
CIFAR100_RECORD = 2 + PIXELS

CIFAR10_FILES = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}
CIFAR100_FILES = {"train": ["train.bin"], "test": ["test.bin"]}

# Subdirectory names used by the official binary tarballs.
CIFAR10_SUBDIR = "cifar-10-batches-bin"
CIFAR100_SUBDIR = "cifar-100-binary"

TOY_CLASSES = ("square", "disk", "cross", "triangle")
TOY_SIZE = 16

PathLike = Union[str, os.PathLike]


class CifarDecodeError(ValueError):
    """Raised when a CIFAR binary cannot be split into whole records."""


class CifarCorruptionError(ValueError):
    """Raised when a decoded record carries an out-of-range label."""


@dataclass(frozen=True)
class DatasetSource:
    name: str
    class_count: int
    image_shape: tuple[int, int, int]
    split: str

    def __post_init__(self):
        if self.name not in ("cifar10", "cifar100", "toy"):
            raise ValueError(f"unknown dataset {self.name!r}")
        if self.split not in ("train", "test"):
            raise ValueError(f"unknown split {self.split!r}")
        if self.class_count not in (10, 100, 4):
            raise ValueError(f"class_count must be 10, 100 or 4, got {self.class_count}")
        if self.image_shape[0] != 3:
            raise ValueError("images must have 3 channels")


@dataclass
class Dataset:
    """An in-memory split of N x 3 x H x W images.

    ``images`` holds the stored form: raw uint8 bytes for CIFAR, float32 in
    [0, 1] for the toy set. :meth:`get` always returns float32 in [0, 1].
    """

    source: DatasetSource
    images: np.ndarray
    labels: np.ndarray
    coarse_labels: Optional[np.ndarray] = None
    normalization: str = "unit_interval"
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    def get(self, idx) -> np.ndarray:
        x = self.images[idx]
        if x.dtype == np.uint8:
            return x.astype(np.float32) / np.float32(255.0)
        return x.astype(np.float32, copy=False)

    def subset(self, count: int) -> "Dataset":
        """First ``count`` samples, keeping the source description."""
        return Dataset(
            self.source,
            self.images[:count],
            self.labels[:count],
            None if self.coarse_labels is None else self.coarse_labels[:count],
            self.normalization,
            dict(self.meta),
        )


# ---------------------------------------------------------------------------
# CIFAR binary format
# ---------------------------------------------------------------------------


def _split_records(raw: bytes, record_size: int, name: str) -> np.ndarray:
    if len(raw) == 0:
        raise CifarDecodeError(f"{name}: empty file, expected {record_size}-byte records")
    whole, rest = divmod(len(raw), record_size)
    if rest:
        raise CifarDecodeError(
            f"{name}: truncated record at byte offset {whole * record_size} "
            f"({rest} trailing bytes, record size {record_size})"
        )
    return np.frombuffer(raw, dtype=np.uint8).reshape(whole, record_size)


def decode_records(raw: bytes, record_size: int, name: str = "<bytes>"):
    """Decode raw CIFAR bytes into (labels, coarse_labels, pixels).

    ``pixels`` is uint8 N x 3 x 32 x 32 (channel-planar, row-major), exactly
    as stored. ``coarse_labels`` is None for 3073-byte records.
    """
    if record_size not in (CIFAR10_RECORD, CIFAR100_RECORD):
        raise ValueError(f"unsupported record size {record_size}")
    recs = _split_records(raw, record_size, name)
    label_bytes = record_size - PIXELS
    pixels = recs[:, label_bytes:].reshape(-1, 3, 32, 32)
    if label_bytes == 1:
        labels, coarse, limit = recs[:, 0].astype(np.int64), None, 10
    else:
        coarse = recs[:, 0].astype(np.int64)
        labels = recs[:, 1].astype(np.int64)
        limit = 100
        bad = np.flatnonzero(coarse >= 20)
        if bad.size:
            i = int(bad[0])
            raise CifarCorruptionError(
                f"{name}: coarse label {coarse[i]} out of range at record {i} "
                f"(byte offset {i * record_size})"
            )
    bad = np.flatnonzero(labels >= limit)
    if bad.size:
        i = int(bad[0])
        raise CifarCorruptionError(
            f"{name}: label {labels[i]} >= {limit} at record {i} "
            f"(byte offset {i * record_size + label_bytes - 1})"
        )
    return labels, coarse, pixels


def encode_records(labels, pixels, coarse_labels=None) -> bytes:
    """Inverse of :func:`decode_records`."""
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(labels), PIXELS)
    cols = [labels, pixels]
    if coarse_labels is not None:
        cols.insert(0, np.asarray(coarse_labels, dtype=np.uint8).reshape(-1, 1))
    return np.concatenate(cols, axis=1).tobytes()


def _resolve_files(path: PathLike, names: Sequence[str], subdir: str) -> list[Path]:
    root = Path(path)
    if root.is_file():
        return [root]
    for base in (root, root / subdir):
        files = [base / n for n in names]
        if all(f.is_file() for f in files):
            return files
    raise FileNotFoundError(f"none of {list(names)} found under {root} or {root / subdir}")


def _load(path, split, files, subdir, record_size, source) -> Dataset:
    labels, coarse, pixels = [], [], []
    for f in _resolve_files(path, files[split], subdir):
        lab, crs, pix = decode_records(f.read_bytes(), record_size, str(f))
        labels.append(lab)
        pixels.append(pix)
        if crs is not None:
            coarse.append(crs)
    return Dataset(
        source,
        np.concatenate(pixels),
        np.concatenate(labels),
        np.concatenate(coarse) if coarse else None,
    )


def load_cifar10(path: PathLike, split: str = "train") -> Dataset:
    """Load a CIFAR-10 split from the official binary files.

    ``path`` may be the extracted ``cifar-10-batches-bin`` directory, its
    parent, or a single batch file.
    """
    source = DatasetSource("cifar10", 10, (3, 32, 32), split)
    return _load(path, split, CIFAR10_FILES, CIFAR10_SUBDIR, CIFAR10_RECORD, source)


def load_cifar100(path: PathLike, split: str = "train") -> Dataset:
    """Load a CIFAR-100 split; fine labels are the classes, coarse kept as metadata."""
    source = DatasetSource("cifar100", 100, (3, 32, 32), split)
    return _load(path, split, CIFAR100_FILES, CIFAR100_SUBDIR, CIFAR100_RECORD, source)


def channel_stats(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std, used for the ``standardized`` input mode."""
    scale = 255.0 if ds.images.dtype == np.uint8 else 1.0
    mean = ds.images.mean(axis=(0, 2, 3), dtype=np.float64) / scale
    std = ds.images.std(axis=(0, 2, 3), dtype=np.float64) / scale
    return mean.astype(np.float32), np.maximum(std, 1e-6).astype(np.float32)


# ---------------------------------------------------------------------------
# Toy shapes
# ---------------------------------------------------------------------------


def _toy_mask(kind: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:TOY_SIZE, 0:TOY_SIZE].astype(np.float64) + 0.5
    dy, dx = yy - cy, xx - cx
    if kind == 0:  # square
        return (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if kind == 1:  # disk
        return dy * dy + dx * dx <= r * r
    if kind == 2:  # cross
        arm = max(r / 3.0, 0.75)
        return ((np.abs(dy) <= arm) & (np.abs(dx) <= r)) | ((np.abs(dx) <= arm) & (np.abs(dy) <= r))
    # upward triangle: apex at top, base at bottom
    t = (dy + r) / (2.0 * r)
    return (dy >= -r) & (dy <= r) & (np.abs(dx) <= t * r)


def toy_sample(seed: int, index: int) -> tuple[np.ndarray, int]:
    """Render toy sample ``index``; depends only on ``(seed, index)``."""
    rng = np.random.default_rng([seed, index])
    label = int(rng.integers(len(TOY_CLASSES)))
    r = rng.uniform(3.0, 5.5)
    cy, cx = rng.uniform(r + 0.5, TOY_SIZE - r - 0.5, size=2)
    fg = rng.uniform(0.45, 1.0, size=3)
    bg = rng.uniform(0.0, 0.35, size=3)
    mask = _toy_mask(label, cy, cx, r)
    img = np.where(mask[None], fg[:, None, None], bg[:, None, None])
    img = img + rng.normal(0.0, 0.04, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32), label


def generate_toy(seed: int, count: int, split: str = "train") -> Dataset:
    """Procedural 4-class 3x16x16 shape dataset (square, disk, cross, triangle)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    images = np.empty((count, 3, TOY_SIZE, TOY_SIZE), dtype=np.float32)
    labels = np.empty(count, dtype=np.int64)
    for i in range(count):
        images[i], labels[i] = toy_sample(seed, i)
    source = DatasetSource("toy", 4, (3, TOY_SIZE, TOY_SIZE), split)
    return Dataset(source, images, labels, meta={"seed": seed})


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


def permutation(n: int, shuffle_seed) -> np.ndarray:
    """Sample order for one pass; ``shuffle_seed`` may be an int or a sequence of ints."""
    if shuffle_seed is None:
        return np.arange(n)
    return np.random.default_rng(shuffle_seed).permutation(n)


def num_batches(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


def batches(
    ds: Dataset, batch_size: int, shuffle_seed=None, start: int = 0
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(images, labels)`` batches in an order fixed by ``shuffle_seed``.

    The last partial batch is emitted as-is. ``start`` skips that many
    batches, which is how a resumed run picks up mid-epoch.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = permutation(len(ds), shuffle_seed)
    for b in range(start, num_batches(len(ds), batch_size)):
        idx = order[b * batch_size:(b + 1) * batch_size]
        yield ds.get(idx), ds.labels[idx]


def load_dataset(name: str, split: str, root: Optional[PathLike] = None, toy_seed: int = 0,
                 toy_count: int = 4096) -> Dataset:
    """Dispatch on dataset name; ``root`` falls back to ``$CONCEPTGAN_DATA``."""
    if name == "toy":
        return generate_toy(toy_seed, toy_count, split)
    root = root or os.environ.get("CONCEPTGAN_DATA")
    if not root:
        raise FileNotFoundError(f"{name}: no data root given and CONCEPTGAN_DATA is unset")
    if name == "cifar10":
        return load_cifar10(root, split)
    if name == "cifar100":
        return load_cifar100(root, split)
    raise ValueError(f"unknown dataset {name!r}")
