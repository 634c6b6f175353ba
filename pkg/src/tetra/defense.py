"""Test-time transformation defense (TETRA) and its top-k pruned variant (FETRA).

Each input is pushed toward every candidate class by a regularized targeted
descent; the class whose transformation moved the input the least wins.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import nn

_ZERO_GRAD = 1e-12


def _l2(diff: np.ndarray) -> np.ndarray:
    return np.sqrt((diff * diff).sum(axis=-1))


def _l1(diff: np.ndarray) -> np.ndarray:
    return np.abs(diff).sum(axis=-1)


# metric name -> row-wise norm of a difference; extend to plug in another metric
METRICS: dict[str, Callable[[np.ndarray], np.ndarray]] = {"L2": _l2, "L1": _l1}


def distance(a, b, metric: str = "L2"):
    """Norm of ``a - b`` along the last axis."""
    try:
        fn = METRICS[metric]
    except KeyError:
        raise ValueError(f"unknown distance metric {metric!r}; known: {sorted(METRICS)}") from None
    d = fn(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))
    return float(d) if np.ndim(d) == 0 else d


@dataclass(frozen=True)
class TetraConfig:
    steps: int = 30
    step_size: float = 0.1
    gamma: float = 1.0
    distance: str = "L2"
    top_k: int | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.distance not in METRICS:
            raise ValueError(f"unknown distance metric {self.distance!r}")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be >= 1")


@dataclass
class TetraVerdict:
    predicted_class: int
    distances: np.ndarray  # [K], NaN where the class was pruned
    transformed_images: np.ndarray | None = None  # [K, D], NaN rows where pruned
    n_transforms: int = 0


def transform_rows(c: nn.Classifier, x: np.ndarray, targets: np.ndarray,
                   cfg: TetraConfig) -> np.ndarray:
    """Run the regularized targeted descent on every (row, target) pair at once.

    ``x[R, D]`` and ``targets[R]``; returns the final perturbations ``[R, D]``.
    Each step moves ``step_size`` along the L2-normalized combined gradient
    (cross-entropy toward the target plus ``gamma * delta``), then clamps
    ``x + delta`` back into the unit box. Rows whose combined gradient
    vanishes keep their delta for that step.
    """
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    delta = np.zeros_like(x)
    for _ in range(cfg.steps):
        g = nn.per_sample_grad_input(c, x + delta, targets) + cfg.gamma * delta
        norms = _l2(g)
        live = norms >= _ZERO_GRAD
        step = np.zeros_like(g)
        step[live] = g[live] / norms[live, None]
        delta = np.clip(x + delta - cfg.step_size * step, 0.0, 1.0) - x
    return delta


def transform_to_class(c: nn.Classifier, x, y: int, cfg: TetraConfig) -> tuple[np.ndarray, float]:
    """Transform a single image toward class ``y``; returns (delta, distance)."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    delta = transform_rows(c, x, np.array([y]), cfg)[0]
    return delta, distance(delta, 0.0, cfg.distance)


def candidate_classes(logits: np.ndarray, top_k: int | None) -> np.ndarray:
    """Boolean mask ``[B, K]`` of classes that get transformed.

    With ``top_k`` set, the k largest logits per row are kept, ties going to
    the lower class index.
    """
    b, k = logits.shape
    if top_k is None or top_k >= k:
        return np.ones((b, k), dtype=bool)
    order = np.argsort(-logits, axis=1, kind="stable")[:, :top_k]
    mask = np.zeros((b, k), dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


@dataclass
class BatchTransforms:
    """Per-(image, class) perturbations for a batch; NaN where pruned."""
    deltas: np.ndarray  # [B, K, D]
    mask: np.ndarray  # [B, K]

    @property
    def n_transforms(self) -> int:
        return int(self.mask.sum())

    def distances(self, metric: str = "L2") -> np.ndarray:
        d = np.full(self.mask.shape, np.nan)
        d[self.mask] = distance(self.deltas[self.mask], 0.0, metric)
        return d

    def predictions(self, metric: str = "L2") -> np.ndarray:
        # nanargmin returns the first minimum, i.e. the lowest class index
        return np.nanargmin(self.distances(metric), axis=1)


def transform_batch(c: nn.Classifier, images, cfg: TetraConfig) -> BatchTransforms:
    """All class transformations for a batch ``[B, D]``, pruned to top-k if configured."""
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    b, d = images.shape
    k = c.num_classes
    if cfg.top_k is not None and cfg.top_k > k:
        raise ValueError(f"top_k={cfg.top_k} exceeds number of classes {k}")
    mask = candidate_classes(nn.forward(c, images), cfg.top_k)
    # rows ordered by (image, class) so an unpruned run matches plain TETRA exactly
    rows, classes = np.nonzero(mask)
    deltas = np.full((b, k, d), np.nan)
    deltas[rows, classes] = transform_rows(c, images[rows], classes, cfg)
    return BatchTransforms(deltas, mask)


def predict(c: nn.Classifier, images, cfg: TetraConfig) -> np.ndarray:
    """TETRA (or FETRA when ``cfg.top_k`` is set) class predictions for a batch."""
    return transform_batch(c, images, cfg).predictions(cfg.distance)


def _verdict(c, x, cfg, keep_images):
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    bt = transform_batch(c, x, cfg)
    dist = bt.distances(cfg.distance)[0]
    pred = int(np.nanargmin(dist))
    images = x[0] + bt.deltas[0] if keep_images else None
    return TetraVerdict(pred, dist, images, bt.n_transforms)


def tetra_classify(c: nn.Classifier, x, cfg: TetraConfig, keep_images: bool = False) -> TetraVerdict:
    """Transform one image toward all K classes and pick the nearest."""
    if cfg.top_k is not None:
        cfg = TetraConfig(cfg.steps, cfg.step_size, cfg.gamma, cfg.distance, None)
    return _verdict(c, x, cfg, keep_images)


def fetra_classify(c: nn.Classifier, x, cfg: TetraConfig, keep_images: bool = False) -> TetraVerdict:
    """Like :func:`tetra_classify` but only over the ``cfg.top_k`` highest-logit classes."""
    if cfg.top_k is None:
        raise ValueError("fetra_classify needs cfg.top_k")
    if not 1 <= cfg.top_k <= c.num_classes:
        raise ValueError(f"top_k must lie in [1, {c.num_classes}]")
    return _verdict(c, x, cfg, keep_images)


def dump_transformed(bt: BatchTransforms, images, path) -> Path:
    """Write transformed images as little-endian float64 plus a CSV sidecar index.

    Only evaluated (image, class) pairs are written, image-major then class.
    The sidecar ``<path>.index.csv`` maps each pair to its float offset.
    """
    path = Path(path)
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    rows, classes = np.nonzero(bt.mask)
    d = images.shape[1]
    out = images[rows] + bt.deltas[rows, classes]
    header = struct.pack("<4sIII", b"TTRA", 1, len(rows), d)
    path.write_bytes(header + np.ascontiguousarray(out, dtype="<f8").tobytes())
    lines = ["image,class,offset,length"]
    for n, (i, k) in enumerate(zip(rows, classes)):
        lines.append(f"{i},{k},{n * d},{d}")
    index = path.with_name(path.name + ".index.csv")
    index.write_text("\n".join(lines) + "\n")
    return index


def load_transformed(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, version, n, d = struct.unpack("<4sIII", data[:16])
    if magic != b"TTRA" or version != 1:
        raise ValueError("not a transformed-image dump")
    return np.frombuffer(data[16:], dtype="<f8").reshape(n, d).copy()
