"""Datasets: seeded Gaussian class clouds and IDX (MNIST-style) files."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IDXFormatError(ValueError):
    pass


@dataclass
class Split:
    images: np.ndarray  # [B, D] in [0, 1]
    labels: np.ndarray  # [B] int

    def __post_init__(self):
        if self.images.ndim != 2 or self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images must be [B, D] with one label per row")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("pixels must lie in [0, 1]")

    def __len__(self):
        return self.labels.shape[0]

    def take(self, n: int) -> "Split":
        return Split(self.images[:n], self.labels[:n])


@dataclass
class Dataset:
    train: Split
    test: Split
    num_classes: int
    means: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.train.images.shape[1]

    def mean_distance(self) -> float:
        """Average pairwise distance between class means (empirical if none were set)."""
        means = self.means
        if means is None:
            means = np.stack([self.train.images[self.train.labels == k].mean(axis=0)
                              for k in range(self.num_classes)])
        k = means.shape[0]
        d = [np.linalg.norm(means[i] - means[j]) for i in range(k) for j in range(i + 1, k)]
        return float(np.mean(d))


@dataclass(frozen=True)
class GaussianSpec:
    classes: int = 4
    dim: int = 16
    separation: float = 1.0
    cov_scale: float = 0.15
    train_per_class: int = 500
    test_per_class: int = 125
    seed: int = 0
    means: tuple | None = None  # explicit [K][D] means, overrides separation


def simplex_means(k: int, dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """K points around the cube centre with every pairwise distance equal to ``separation``."""
    if k > dim:
        raise ValueError(f"need dim >= classes for an equidistant layout ({k} > {dim})")
    q, _ = np.linalg.qr(rng.standard_normal((dim, k)))
    vertices = q.T - q.T.mean(axis=0)
    return 0.5 + vertices * (separation / np.sqrt(2.0))


def gen_dataset(spec: GaussianSpec) -> Dataset:
    """Isotropic Gaussian clouds around the class means, clipped to [0, 1].

    Classes are interleaved (0, 1, ..., K-1, 0, 1, ...) so any prefix of a
    split is class-balanced.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.means is not None:
        means = np.asarray(spec.means, dtype=np.float64)
        if means.shape != (spec.classes, spec.dim):
            raise ValueError(f"means must be {spec.classes}x{spec.dim}, got {means.shape}")
    else:
        means = simplex_means(spec.classes, spec.dim, spec.separation, rng)

    def draw(per_class):
        labels = np.tile(np.arange(spec.classes), per_class)
        noise = rng.standard_normal((labels.size, spec.dim)) * spec.cov_scale
        return Split(np.clip(means[labels] + noise, 0.0, 1.0), labels)

    train = draw(spec.train_per_class)
    test = draw(spec.test_per_class)
    return Dataset(train, test, spec.classes, means)


def _read_header(data: bytes, magic: int, what: str):
    if len(data) < 8:
        raise IDXFormatError(f"{what}: truncated header at byte {len(data)}")
    got, = struct.unpack(">I", data[:4])
    if got != magic:
        raise IDXFormatError(f"{what}: bad magic 0x{got:08x} at byte 0, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    end = 4 + 4 * ndim
    if len(data) < end:
        raise IDXFormatError(f"{what}: truncated dimensions at byte {len(data)}")
    dims = struct.unpack(f">{ndim}I", data[4:end])
    need = end + int(np.prod(dims))
    if len(data) < need:
        raise IDXFormatError(f"{what}: truncated payload at byte {len(data)}, expected {need} bytes")
    if len(data) > need:
        raise IDXFormatError(f"{what}: {len(data) - need} trailing bytes at byte {need}")
    return dims, end


def read_idx_images(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (n, rows, cols), start = _read_header(data, IDX_IMAGES_MAGIC, str(path))
    pixels = np.frombuffer(data, dtype=np.uint8, offset=start)
    return pixels.reshape(n, rows * cols)


def read_idx_labels(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (n,), start = _read_header(data, IDX_LABELS_MAGIC, str(path))
    return np.frombuffer(data, dtype=np.uint8, offset=start).astype(np.int64)


def load_idx(images_path, labels_path, classes=None, per_class: int | None = None) -> Split:
    """Load an IDX image/label pair, scale pixels by 1/255 and keep a class subset.

    Kept classes are relabelled 0..len(classes)-1 in the order given.
    """
    raw = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if raw.shape[0] != labels.shape[0]:
        raise IDXFormatError(f"{raw.shape[0]} images but {labels.shape[0]} labels")
    images = raw.astype(np.float64) / 255.0
    if classes is None:
        classes = sorted(set(labels.tolist()))
    keep = []
    for new, cls in enumerate(classes):
        idx = np.flatnonzero(labels == cls)
        if per_class is not None:
            idx = idx[:per_class]
        keep.append((idx, new))
    order = np.sort(np.concatenate([idx for idx, _ in keep])) if keep else np.array([], dtype=int)
    remap = {cls: new for new, cls in enumerate(classes)}
    return Split(images[order], np.array([remap[l] for l in labels[order]], dtype=np.int64))


def write_idx(images_u8: np.ndarray, labels, images_path, labels_path) -> None:
    """Write an ``[N, rows, cols]`` uint8 array and labels as IDX files."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    n, rows, cols = images_u8.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols)
                                  + images_u8.tobytes())
    labels = np.asarray(labels, dtype=np.uint8)
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, labels.size) + labels.tobytes())
