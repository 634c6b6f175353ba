"""Dense ReLU networks with exact reverse-mode gradients.

Tensors are plain float64 numpy arrays. Images are rows of a 2-D array
``x[B, D]`` with pixels in [0, 1]; logits are ``[B, K]``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"TTRA"
CHECKPOINT_VERSION = 1

_KIND_DENSE = 1
_KIND_RELU = 2


class DimensionError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class Dense:
    weight: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape


@dataclass
class ReLU:
    pass


@dataclass
class Classifier:
    layers: list = field(default_factory=list)
    num_classes: int = 0

    def __post_init__(self):
        dense = [l for l in self.layers if isinstance(l, Dense)]
        if not dense:
            raise DimensionError("classifier needs at least one Dense layer")
        for i, (a, b) in enumerate(zip(dense, dense[1:])):
            if b.weight.shape[1] != a.weight.shape[0]:
                raise DimensionError(
                    f"dense layer {i + 1} expects width {b.weight.shape[1]}, "
                    f"previous layer emits {a.weight.shape[0]}"
                )
        if dense[-1].weight.shape[0] != self.num_classes:
            raise DimensionError(
                f"final layer width {dense[-1].weight.shape[0]} != num_classes {self.num_classes}"
            )

    @property
    def input_dim(self) -> int:
        return next(l for l in self.layers if isinstance(l, Dense)).weight.shape[1]

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in layer order (weight, bias per Dense layer)."""
        out = []
        for layer in self.layers:
            if isinstance(layer, Dense):
                out.extend([layer.weight, layer.bias])
        return out

    def copy(self) -> "Classifier":
        layers = [
            Dense(l.weight.copy(), l.bias.copy()) if isinstance(l, Dense) else ReLU()
            for l in self.layers
        ]
        return Classifier(layers, self.num_classes)


def mlp(widths: list[int], rng: np.random.Generator) -> Classifier:
    """Dense/ReLU stack with Glorot-uniform weights and zero biases.

    ``widths`` runs from input dimension to number of classes, e.g. ``[16, 32, 4]``.
    """
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(Dense(w, np.zeros(fan_out)))
        if i < len(widths) - 2:
            layers.append(ReLU())
    return Classifier(layers, widths[-1])


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DimensionError(f"expected a [B, D] batch, got shape {x.shape}")
    return x


def _forward_cached(c: Classifier, x: np.ndarray):
    acts = [x]
    h = x
    for i, layer in enumerate(c.layers):
        if isinstance(layer, Dense):
            if h.shape[1] != layer.weight.shape[1]:
                raise DimensionError(
                    f"layer {i} (Dense {layer.weight.shape[1]}->{layer.weight.shape[0]}) "
                    f"got input width {h.shape[1]}"
                )
            h = h @ layer.weight.T + layer.bias
        else:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return h, acts


def forward(c: Classifier, x) -> np.ndarray:
    """Logits ``[B, K]`` for a batch (a single 1-D image is promoted to B=1)."""
    logits, _ = _forward_cached(c, _as_batch(x))
    return logits


def _backward(c: Classifier, acts, dlogits: np.ndarray, want_params: bool):
    grads = []
    g = dlogits
    for i in range(len(c.layers) - 1, -1, -1):
        layer = c.layers[i]
        if isinstance(layer, Dense):
            if want_params:
                grads.append((g.T @ acts[i], g.sum(axis=0)))
            g = g @ layer.weight
        else:
            # subgradient at 0 is 0
            g = g * (acts[i] > 0.0)
    grads.reverse()
    return g, grads


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def _check_labels(labels, batch: int, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != batch:
        raise DimensionError(f"{labels.shape[0]} labels for a batch of {batch}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise IndexError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    return labels


def per_sample_cross_entropy(logits: np.ndarray, labels) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits.shape[0], logits.shape[1])
    return -log_softmax(logits)[np.arange(logits.shape[0]), labels]


def cross_entropy(logits, labels) -> float:
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    return float(per_sample_cross_entropy(logits, labels).mean())


def _ce_dlogits(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    d = softmax(logits)
    d[np.arange(len(labels)), labels] -= 1.0
    return d


def input_vjp(c: Classifier, x, dlogits) -> np.ndarray:
    """Pull a logit-space cotangent ``[B, K]`` back to input space ``[B, D]``."""
    x = _as_batch(x)
    _, acts = _forward_cached(c, x)
    g, _ = _backward(c, acts, np.asarray(dlogits, dtype=np.float64), want_params=False)
    return g


def per_sample_loss_and_grad_input(c: Classifier, x, labels) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample cross-entropy ``[B]`` and each sample's input gradient ``[B, D]``."""
    x = _as_batch(x)
    logits, acts = _forward_cached(c, x)
    labels = _check_labels(labels, x.shape[0], c.num_classes)
    g, _ = _backward(c, acts, _ce_dlogits(logits, labels), want_params=False)
    return per_sample_cross_entropy(logits, labels), g


def per_sample_grad_input(c: Classifier, x, labels) -> np.ndarray:
    """Row ``i`` is the gradient of sample ``i``'s own cross-entropy w.r.t. its input."""
    return per_sample_loss_and_grad_input(c, x, labels)[1]


def grad_input(c: Classifier, x, labels) -> np.ndarray:
    """Gradient of the batch-mean cross-entropy w.r.t. the input batch."""
    x = _as_batch(x)
    return per_sample_grad_input(c, x, labels) / x.shape[0]


def loss_and_grad_params(c: Classifier, x, labels) -> tuple[float, list[np.ndarray]]:
    x = _as_batch(x)
    logits, acts = _forward_cached(c, x)
    labels = _check_labels(labels, x.shape[0], c.num_classes)
    loss = float(per_sample_cross_entropy(logits, labels).mean())
    d = _ce_dlogits(logits, labels) / x.shape[0]
    _, grads = _backward(c, acts, d, want_params=True)
    flat = []
    for gw, gb in grads:
        flat.extend([gw, gb])
    return loss, flat


def grad_params(c: Classifier, x, labels) -> list[np.ndarray]:
    """Gradients of the batch-mean cross-entropy, aligned with ``c.params()``."""
    return loss_and_grad_params(c, x, labels)[1]


def save_checkpoint(c: Classifier, path) -> None:
    buf = bytearray(CHECKPOINT_MAGIC)
    buf += struct.pack("<III", CHECKPOINT_VERSION, c.num_classes, len(c.layers))
    for layer in c.layers:
        if isinstance(layer, Dense):
            out_dim, in_dim = layer.weight.shape
            buf += struct.pack("<IIII", _KIND_DENSE, 2, out_dim, in_dim)
            buf += np.ascontiguousarray(layer.weight, dtype="<f8").tobytes()
            buf += np.ascontiguousarray(layer.bias, dtype="<f8").tobytes()
        else:
            buf += struct.pack("<II", _KIND_RELU, 0)
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path) -> Classifier:
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"truncated checkpoint at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic, not a TTRA checkpoint")
    version, k, n_layers = struct.unpack("<III", take(12))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    layers = []
    for _ in range(n_layers):
        kind, ndims = struct.unpack("<II", take(8))
        dims = struct.unpack(f"<{ndims}I", take(4 * ndims))
        if kind == _KIND_DENSE:
            if ndims != 2:
                raise CheckpointError(f"dense layer with {ndims} dims at byte {pos}")
            out_dim, in_dim = dims
            w = np.frombuffer(take(8 * out_dim * in_dim), dtype="<f8").reshape(out_dim, in_dim)
            b = np.frombuffer(take(8 * out_dim), dtype="<f8")
            layers.append(Dense(w.astype(np.float64), b.astype(np.float64)))
        elif kind == _KIND_RELU:
            layers.append(ReLU())
        else:
            raise CheckpointError(f"unknown layer kind {kind} at byte {pos - 8 - 4 * ndims}")
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes after last layer")
    return Classifier(layers, k)
