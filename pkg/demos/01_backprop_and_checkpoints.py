"""
A small MLP with exact gradients
================================

Build a Dense/ReLU network, check its input and parameter gradients against
central differences, and round-trip it through the binary checkpoint format.
"""

import tempfile
from pathlib import Path

import numpy as np

from tetra import nn

rng = np.random.default_rng(0)
c = nn.mlp([6, 10, 3], rng)
x = rng.uniform(size=(4, 6))
y = np.array([0, 1, 2, 1])
print("logits:\n", nn.forward(c, x).round(3))
print("loss:", round(nn.cross_entropy(nn.forward(c, x), y), 4))

# central differences on the input
h = 1e-5
fd = np.zeros_like(x)
for idx in np.ndindex(x.shape):
    e = np.zeros_like(x)
    e[idx] = h
    fd[idx] = (nn.cross_entropy(nn.forward(c, x + e), y) - nn.cross_entropy(nn.forward(c, x - e), y)) / (2 * h)
print("max |grad_input - fd|:", np.abs(nn.grad_input(c, x, y) - fd).max())

# one parameter gradient per weight and bias, in layer order
for p, g in zip(c.params(), nn.grad_params(c, x, y)):
    print("param", p.shape, "grad norm", round(float(np.linalg.norm(g)), 4))

# checkpoints: "TTRA" header, then per-layer kind, dims and little-endian float64 data
with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "model.ckpt"
    nn.save_checkpoint(c, path)
    back = nn.load_checkpoint(path)
    print("checkpoint bytes:", path.stat().st_size,
          "identical logits:", np.array_equal(nn.forward(back, x), nn.forward(c, x)))
