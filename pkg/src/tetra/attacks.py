"""Projected-gradient attacks: untargeted/targeted PGD and ranking PGD."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .softrank import default_regularization, soft_rank, soft_rank_grad

L2 = "L2"
LINF = "Linf"
_ZERO_GRAD = 1e-12


@dataclass(frozen=True)
class ThreatModel:
    norm: str
    epsilon: float

    def __post_init__(self):
        if self.norm not in (L2, LINF):
            raise ValueError(f"norm must be {L2!r} or {LINF!r}, got {self.norm!r}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")

    @property
    def label(self) -> str:
        return f"{self.norm}:{self.epsilon:g}"

    @classmethod
    def parse(cls, text: str) -> "ThreatModel":
        norm, eps = text.strip().split(":")
        norm = {"l2": L2, "linf": LINF}.get(norm.strip().lower(), norm.strip())
        return cls(norm, float(eps))


@dataclass(frozen=True)
class Untargeted:
    pass


@dataclass(frozen=True)
class Targeted:
    target: int


@dataclass(frozen=True)
class RankTrue:
    k: int
    eps_r: float | None = None  # None: eps_r_scale * (std(logits) + 1e-6) per image
    eps_r_scale: float = 0.1


@dataclass(frozen=True)
class AttackConfig:
    steps: int = 20
    step_size: float = 0.1
    restarts: int = 2
    target: object = field(default_factory=Untargeted)

    def __post_init__(self):
        if self.steps < 1 or self.restarts < 1:
            raise ValueError("steps and restarts must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")


def _row_norms(a: np.ndarray, norm: str) -> np.ndarray:
    if norm == L2:
        return np.sqrt((a * a).sum(axis=1))
    return np.abs(a).max(axis=1) if a.shape[1] else np.zeros(a.shape[0])


def project_ball(delta, tm: ThreatModel) -> np.ndarray:
    """Project each row of ``delta`` onto the ``tm`` ball (1-D input is one row)."""
    delta = np.asarray(delta, dtype=np.float64)
    single = delta.ndim == 1
    d = delta[None, :] if single else delta
    if tm.norm == LINF:
        out = np.clip(d, -tm.epsilon, tm.epsilon)
    else:
        norms = _row_norms(d, L2)
        scale = np.ones_like(norms)
        outside = norms > tm.epsilon
        scale[outside] = tm.epsilon / norms[outside]
        out = d * scale[:, None]
    return out[0] if single else out


def clamp_image(x) -> np.ndarray:
    return np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)


def steepest_direction(g: np.ndarray, norm: str) -> np.ndarray:
    """Unit steepest-ascent direction per row; rows with ~zero gradient get 0."""
    n2 = _row_norms(g, L2)
    live = n2 >= _ZERO_GRAD
    out = np.zeros_like(g)
    if norm == LINF:
        out[live] = np.sign(g[live])
    else:
        out[live] = g[live] / n2[live, None]
    return out


def random_init(shape, tm: ThreatModel, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample from the ``tm`` ball, one per row."""
    b, d = shape
    if tm.norm == LINF:
        return rng.uniform(-tm.epsilon, tm.epsilon, size=shape)
    direction = rng.standard_normal(shape)
    direction /= np.maximum(np.sqrt((direction ** 2).sum(axis=1, keepdims=True)), 1e-300)
    radius = tm.epsilon * rng.uniform(size=(b, 1)) ** (1.0 / max(d, 1))
    return direction * radius


def _run_pgd(x, tm, cfg, seed, objective):
    """Shared PGD loop.

    ``objective(x_adv)`` returns ``(score[B], ascent_grad[B, D])``; higher score
    is better for the attacker. Restart 0 starts at delta = 0, later restarts
    from a uniform draw in the ball. Per image the best final score wins,
    ties keeping the earlier restart.
    """
    x = np.asarray(x, dtype=np.float64)
    best = x.copy()
    if tm.epsilon == 0:
        return best
    best_score = np.full(x.shape[0], -np.inf)
    for r in range(cfg.restarts):
        if r == 0:
            delta = np.zeros_like(x)
        else:
            rng = np.random.default_rng([seed, r])
            delta = random_init(x.shape, tm, rng)
            delta = clamp_image(x + delta) - x
        for _ in range(cfg.steps):
            _, g = objective(x + delta)
            delta = delta + cfg.step_size * steepest_direction(g, tm.norm)
            delta = project_ball(delta, tm)
            delta = clamp_image(x + delta) - x
        x_adv = x + delta
        score, _ = objective(x_adv)
        better = score > best_score
        best[better] = x_adv[better]
        best_score[better] = score[better]
    return best


def pgd_untargeted(c: nn.Classifier, images, labels, tm: ThreatModel,
                   cfg: AttackConfig, seed: int = 0) -> np.ndarray:
    """Maximize cross-entropy of the true labels inside the ball and image domain."""
    labels = np.asarray(labels, dtype=np.int64)

    def objective(xa):
        return nn.per_sample_loss_and_grad_input(c, xa, labels)

    return _run_pgd(images, tm, cfg, seed, objective)


def pgd_targeted(c: nn.Classifier, images, target_labels, tm: ThreatModel,
                 cfg: AttackConfig, seed: int = 0) -> np.ndarray:
    """Minimize cross-entropy toward ``target_labels`` (one target per row or a scalar)."""
    images = np.asarray(images, dtype=np.float64)
    targets = np.broadcast_to(np.asarray(target_labels, dtype=np.int64),
                              (images.shape[0],)).copy()

    def objective(xa):
        loss, g = nn.per_sample_loss_and_grad_input(c, xa, targets)
        return -loss, -g

    return _run_pgd(images, tm, cfg, seed, objective)


def true_class_soft_rank(logits: np.ndarray, labels: np.ndarray, eps_r: float | None,
                         eps_r_scale: float = 0.1):
    """Soft rank of each row's true class and its gradient w.r.t. the logits."""
    values = np.empty(logits.shape[0])
    grads = np.zeros_like(logits)
    for i, (row, y) in enumerate(zip(logits, labels)):
        eps = default_regularization(row, eps_r_scale) if eps_r is None else eps_r
        values[i] = soft_rank(row, eps).ranks[y]
        upstream = np.zeros(row.size)
        upstream[y] = 1.0
        grads[i] = soft_rank_grad(row, eps, upstream)
    return values, grads


def hard_rank(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """1-based descending position of each row's label (ties go to the lower index)."""
    order = np.argsort(-logits, axis=1, kind="stable")
    return np.argmax(order == np.asarray(labels)[:, None], axis=1) + 1


def rpgd(c: nn.Classifier, images, labels, tm: ThreatModel, cfg: AttackConfig,
         seed: int = 0) -> np.ndarray:
    """Ranking PGD: push the true class down the logit ordering.

    Ascends the soft (descending) rank value of the true class. Restarts are
    compared by the hard rank of the true class first, then the soft rank.
    """
    target = cfg.target
    if not isinstance(target, RankTrue):
        raise ValueError("rpgd needs an AttackConfig with a RankTrue target")
    if target.k >= c.num_classes:
        raise ValueError(f"k={target.k} must be below the number of classes {c.num_classes}")
    if target.k < 1:
        raise ValueError("k must be >= 1")
    labels = np.asarray(labels, dtype=np.int64)
    k = c.num_classes

    def objective(xa):
        logits = nn.forward(c, xa)
        values, dlogits = true_class_soft_rank(logits, labels, target.eps_r, target.eps_r_scale)
        # hard rank dominates; soft rank in [1, K] breaks ties within it
        score = hard_rank(logits, labels) * (k + 1.0) + values
        return score, nn.input_vjp(c, xa, dlogits)

    return _run_pgd(images, tm, cfg, seed, objective)
