"""Datasets: synthetic 8x8 corpora and IDX (MNIST-format) ingestion."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ParseError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
SIDE = 8
N_CLASSES = 10


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: np.ndarray  # (n, dim), float64
    labels: np.ndarray   # (n,), int64
    train_idx: np.ndarray
    heldout_idx: np.ndarray
    name: str = ""

    def __post_init__(self):
        n = len(self.samples)
        if self.samples.ndim != 2 or len(self.labels) != n:
            raise ConfigurationError("samples must be (n, dim) with one label per sample")
        both = np.concatenate([self.train_idx, self.heldout_idx])
        if len(both) != n or not np.array_equal(np.sort(both), np.arange(n)):
            raise ConfigurationError("train/heldout split must be disjoint and exhaustive")

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.samples[self.train_idx], self.labels[self.train_idx]

    def heldout(self) -> tuple[np.ndarray, np.ndarray]:
        return self.samples[self.heldout_idx], self.labels[self.heldout_idx]

    def manifest(self) -> dict:
        return {"name": self.name, "n": len(self.samples), "dim": self.dim,
                "train": self.train_idx.tolist(), "heldout": self.heldout_idx.tolist()}


def split_indices(n: int, heldout_fraction: float, rng: np.random.Generator):
    if not 0.0 <= heldout_fraction < 1.0:
        raise ConfigurationError("heldout_fraction must lie in [0, 1)")
    perm = rng.permutation(n)
    n_held = int(round(n * heldout_fraction))
    return np.sort(perm[n_held:]), np.sort(perm[:n_held])


def make_dataset(samples, labels, heldout_fraction=0.25, seed=0, name="") -> Dataset:
    samples = np.asarray(samples, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    train, held = split_indices(len(samples), heldout_fraction, np.random.default_rng(seed))
    return Dataset(samples, labels, train, held, name)


def _bar(cls: int, rng: np.random.Generator) -> np.ndarray:
    img = np.zeros((SIDE, SIDE))
    start = rng.integers(0, 3)
    stop = min(SIDE, start + rng.integers(6, 9))
    span = np.arange(start, stop)
    value = rng.uniform(0.7, 1.0)
    rows = (1, 3, 4, 6)
    if cls < 4:
        img[rows[cls], span] = value
    elif cls < 8:
        img[span, rows[cls - 4]] = value
    elif cls == 8:
        img[span, span] = value
    else:
        img[span, SIDE - 1 - span] = value
    return img


_BLOB_CENTERS = ((2.0, 2.0), (2.0, 5.0), (5.0, 2.0), (5.0, 5.0), (3.5, 3.5))
_BLOB_WIDTHS = (0.8, 1.8)


def _blob(cls: int, rng: np.random.Generator) -> np.ndarray:
    cy, cx = _BLOB_CENTERS[cls % 5]
    width = _BLOB_WIDTHS[cls // 5]
    cy += rng.uniform(-0.5, 0.5)
    cx += rng.uniform(-0.5, 0.5)
    yy, xx = np.mgrid[0:SIDE, 0:SIDE]
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    return rng.uniform(0.7, 1.0) * np.exp(-d2 / (2.0 * width ** 2))


def make_synthetic(corpus: str, n_per_class: int, seed: int,
                   heldout_fraction: float = 0.25, noise: float = 0.05) -> Dataset:
    """Class-balanced 8x8 corpus, flattened to 64-vectors in [0, 1].

    ``bars``: 4 horizontal rows, 4 vertical columns and 2 diagonals of
    random extent and intensity. ``blobs``: Gaussian bumps at 5 centers
    with 2 widths, jittered.
    """
    if n_per_class < 1:
        raise ConfigurationError("n_per_class must be at least 1")
    if corpus == "bars":
        draw = _bar
    elif corpus == "blobs":
        draw = _blob
    else:
        raise ConfigurationError(f"unknown corpus {corpus!r}")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(N_CLASSES), n_per_class)
    images = np.stack([draw(int(c), rng) for c in labels])
    images = np.clip(images + rng.normal(0.0, noise, images.shape), 0.0, 1.0)
    order = rng.permutation(len(labels))
    samples = images.reshape(len(labels), -1)[order]
    return make_dataset(samples, labels[order], heldout_fraction,
                        seed=int(rng.integers(2**32)), name=corpus)


def _maybe_gunzip(data: bytes) -> bytes:
    data = bytes(data)
    if data[:2] == b"\x1f\x8b":
        return gzip.decompress(data)
    return data


def _read_header(data: bytes, magic: int, n_dims: int, what: str) -> tuple[int, ...]:
    need = 4 + 4 * n_dims
    if len(data) < 4:
        raise ParseError(f"{what} file truncated before magic", offset=len(data), field="magic")
    (found,) = struct.unpack_from(">I", data, 0)
    if found != magic:
        raise ParseError(f"{what} file has magic 0x{found:08x}, expected 0x{magic:08x}",
                         offset=0, field="magic")
    if len(data) < need:
        raise ParseError(f"{what} file truncated in dimension sizes", offset=len(data),
                         field="dims")
    return struct.unpack_from(f">{n_dims}I", data, 4)


def parse_idx(image_bytes: bytes, label_bytes: bytes, heldout_fraction: float = 0.25,
              seed: int = 0, limit: int | None = None) -> Dataset:
    """Images (magic 0x803, count/rows/cols) plus labels (magic 0x801, count)."""
    images = _maybe_gunzip(image_bytes)
    labels = _maybe_gunzip(label_bytes)
    n_img, rows, cols = _read_header(images, IMAGE_MAGIC, 3, "image")
    (n_lab,) = _read_header(labels, LABEL_MAGIC, 1, "label")
    if n_img != n_lab:
        raise ParseError(f"{n_img} images but {n_lab} labels", field="count")
    dim = rows * cols
    if len(images) < 16 + n_img * dim:
        raise ParseError("image pixel block truncated", offset=len(images), field="pixels")
    if len(labels) < 8 + n_lab:
        raise ParseError("label block truncated", offset=len(labels), field="labels")
    n = n_img if limit is None else min(n_img, limit)
    pixels = np.frombuffer(images, dtype=np.uint8, count=n * dim, offset=16)
    samples = pixels.reshape(n, dim).astype(np.float64) / 255.0
    lab = np.frombuffer(labels, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    return make_dataset(samples, lab, heldout_fraction, seed, name="idx")


def build_idx(images: np.ndarray, labels) -> tuple[bytes, bytes]:
    """Encode uint8 images (n, rows, cols) and labels as IDX byte strings."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    img = struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols) + images.tobytes()
    lab = struct.pack(">II", LABEL_MAGIC, len(labels)) + np.asarray(labels, np.uint8).tobytes()
    return img, lab


def load_idx_files(image_path, label_path, **kwargs) -> Dataset:
    with open(image_path, "rb") as f:
        img = f.read()
    with open(label_path, "rb") as f:
        lab = f.read()
    return parse_idx(img, lab, **kwargs)
