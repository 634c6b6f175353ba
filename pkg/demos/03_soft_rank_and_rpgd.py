"""
Soft ranks and the ranking attack
=================================

Soft ranks relax the rank vector into a projection onto the permutahedron,
computed with pool-adjacent-violators. Ranks are descending: the largest
score has rank 1. The ranking attack ascends the soft rank of the true class,
pushing it out of the top k instead of merely off the top spot.
"""

from tetra import experiments as ex
from tetra.config import load_config
from tetra.softrank import isotonic_l2, soft_rank, soft_rank_grad

print("isotonic fit of (1, 3, 2, 0):", isotonic_l2([1.0, 3.0, 2.0, 0.0]))

scores = [2.0, 0.5, 0.4, -1.0]
for eps in (0.01, 0.5, 5.0):
    print(f"eps={eps:<5} soft ranks {soft_rank(scores, eps).ranks.round(3)}")
print("d rank[1] / d scores at eps=0.5:", soft_rank_grad(scores, 0.5, [0, 1, 0, 0]).round(3))

# top-k curves after PGD and after the ranking attack on the toy AT classifier
cfg = load_config("configs/toy.ini")
data = ex.build_dataset(cfg)
c, _ = ex.build_classifier(cfg, data)
report = ex.run_rpgd_analysis(cfg, c, dataset=data)
print(f"threat {cfg.rpgd_threat.label}")
for name in ("pgd", "rpgd", "diff"):
    print(f"{name:5s}", " ".join(f"{v:+.3f}" for v in report.topk[name]))
