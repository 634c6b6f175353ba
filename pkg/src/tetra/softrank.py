"""Soft ranks via Euclidean projection onto the permutahedron.

Convention: ranks are descending, so the largest score gets rank 1 and the
smallest gets rank K. Pushing a class down the ordering therefore means
*increasing* its rank value.

The projection of ``z`` onto the permutahedron of ``w = (K, K-1, ..., 1)``
is ``z - v`` (in sorted coordinates) where ``v`` solves an isotonic
regression of ``sort_desc(z) - w``. Soft ranks are that projection applied
to ``z = -scores / eps``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _pav_blocks(y: np.ndarray):
    """Pool adjacent violators for a nonincreasing fit.

    Returns (block_values, block_sizes) in left-to-right order.
    """
    sums: list[float] = []
    sizes: list[int] = []
    for value in y:
        sums.append(float(value))
        sizes.append(1)
        # merge while the newest block's mean exceeds its left neighbour's
        while len(sums) > 1 and sums[-1] * sizes[-2] > sums[-2] * sizes[-1]:
            s, n = sums.pop(), sizes.pop()
            sums[-1] += s
            sizes[-1] += n
    means = np.array([s / n for s, n in zip(sums, sizes)])
    return means, np.array(sizes, dtype=np.int64)


def isotonic_l2(y) -> np.ndarray:
    """argmin over nonincreasing v of ||v - y||^2."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size == 0:
        return y.copy()
    means, sizes = _pav_blocks(y)
    return np.repeat(means, sizes)


def default_regularization(scores, scale: float = 0.1) -> float:
    """Scale-aware regularization: ``scale * (std(scores) + 1e-6)``."""
    return scale * (float(np.std(scores)) + 1e-6)


@dataclass
class SoftRankResult:
    ranks: np.ndarray
    blocks: list  # lists of original indices pooled together
    order: np.ndarray  # permutation sorting -scores/eps descending
    sizes: np.ndarray  # block sizes in sorted order


def _check_eps(eps_r: float):
    if not eps_r > 0:
        raise ValueError(f"soft-rank regularization must be positive, got {eps_r}")


def soft_rank(scores, eps_r: float | None = None) -> SoftRankResult:
    """Descending soft ranks of ``scores`` with regularization ``eps_r``.

    As ``eps_r -> 0`` with distinct scores this recovers the hard ranks
    (largest score -> 1). The ranks always sum to K(K+1)/2.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if eps_r is None:
        eps_r = default_regularization(scores)
    _check_eps(eps_r)
    k = scores.size
    z = -scores / eps_r
    order = np.argsort(-z, kind="stable")
    s = z[order]
    w = np.arange(k, 0, -1, dtype=np.float64)
    means, sizes = _pav_blocks(s - w)
    proj_sorted = s - np.repeat(means, sizes)
    ranks = np.empty(k)
    ranks[order] = proj_sorted
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    blocks = [sorted(order[a:b].tolist()) for a, b in zip(bounds[:-1], bounds[1:])]
    return SoftRankResult(ranks=ranks, blocks=blocks, order=order, sizes=sizes)


def soft_rank_grad(scores, eps_r: float | None, upstream) -> np.ndarray:
    """Vector-Jacobian product ``upstream^T d ranks / d scores``.

    Within a pooled block the projection's Jacobian averages, across blocks it
    is zero; the outer ``-1/eps_r`` comes from ``z = -scores / eps_r``.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if eps_r is None:
        eps_r = default_regularization(scores)
    res = soft_rank(scores, eps_r)
    u = np.asarray(upstream, dtype=np.float64).reshape(-1)[res.order]
    bounds = np.concatenate([[0], np.cumsum(res.sizes)])
    block_means = np.add.reduceat(u, bounds[:-1]) / res.sizes
    g_sorted = u - np.repeat(block_means, res.sizes)
    g = np.empty_like(g_sorted)
    g[res.order] = g_sorted
    return -g / eps_r
