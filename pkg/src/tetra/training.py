"""SGD training (vanilla and PGD adversarial) plus accuracy metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import nn
from .attacks import AttackConfig, ThreatModel, pgd_untargeted


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    adversarial: tuple[ThreatModel, AttackConfig] | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class EpochLoss:
    epoch: int
    clean_loss: float
    adv_loss: float | None


def train(c: nn.Classifier, images, labels, cfg: TrainConfig) -> tuple[nn.Classifier, list[EpochLoss]]:
    """Minibatch SGD with momentum on cross-entropy; returns a new classifier.

    With ``cfg.adversarial`` set every minibatch is replaced by untargeted PGD
    examples crafted against the current weights. Shuffling and attack
    restarts draw from separate streams so a zero-radius adversary follows
    the vanilla trajectory exactly.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if images.shape[0] == 0:
        raise ValueError("training data is empty")
    c = c.copy()
    params = c.params()
    velocity = [np.zeros_like(p) for p in params]
    shuffle_rng = np.random.default_rng([cfg.seed, 0])
    history = []
    n = images.shape[0]
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        clean_total, adv_total = 0.0, 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            xb, yb = images[idx], labels[idx]
            if cfg.adversarial is not None:
                clean_total += nn.cross_entropy(nn.forward(c, xb), yb) * len(idx)
                tm, acfg = cfg.adversarial
                xb = pgd_untargeted(c, xb, yb, tm, acfg, seed=_batch_seed(cfg.seed, epoch, b))
            loss, grads = nn.loss_and_grad_params(c, xb, yb)
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged to {loss} in epoch {epoch}")
            if cfg.adversarial is None:
                clean_total += loss * len(idx)
            else:
                adv_total += loss * len(idx)
            for p, v, g in zip(params, velocity, grads):
                v *= cfg.momentum
                v -= cfg.learning_rate * g
                p += v
        history.append(EpochLoss(epoch, clean_total / n,
                                 adv_total / n if cfg.adversarial is not None else None))
    return c, history


def _batch_seed(seed: int, epoch: int, batch: int) -> int:
    return int(np.random.SeedSequence([seed, 1, epoch, batch]).generate_state(1)[0])


def write_loss_history(history: list[EpochLoss], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "clean_loss", "adv_loss"])
        for h in history:
            w.writerow([h.epoch, f"{h.clean_loss:.10g}",
                        "" if h.adv_loss is None else f"{h.adv_loss:.10g}"])


Attack = Callable[[nn.Classifier, np.ndarray, np.ndarray], np.ndarray]


def _maybe_attack(c, images, labels, attack: Attack | None):
    images = np.asarray(images, dtype=np.float64)
    return images if attack is None else attack(c, images, np.asarray(labels))


def evaluate(c: nn.Classifier, images, labels, attack: Attack | None = None) -> float:
    """Top-1 accuracy, after ``attack(c, images, labels)`` when one is given."""
    return topk_accuracy(c, images, labels, 1, attack)


def topk_hits(logits: np.ndarray, labels, k: int) -> np.ndarray:
    """Whether each label sits among its row's k largest logits (ties to lower index)."""
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return (order == np.asarray(labels)[:, None]).any(axis=1)


def topk_accuracy(c: nn.Classifier, images, labels, k: int, attack: Attack | None = None) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("empty evaluation set")
    x = _maybe_attack(c, images, labels, attack)
    return float(topk_hits(nn.forward(c, x), labels, k).mean())
