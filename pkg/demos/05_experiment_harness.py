"""
The experiment harness from Python
==================================

Everything the ``tetra`` command does is available as functions. This runs
the main accuracy table and the distance ablation on the toy config and
writes the same CSV files the CLI would.
"""

import tempfile
from pathlib import Path

from tetra import experiments as ex
from tetra.config import load_config

cfg = load_config("configs/toy.ini")
data = ex.build_dataset(cfg)
c, _ = ex.build_classifier(cfg, data)

report = ex.run_table(cfg, c, dataset=data)
for r in report.rows:
    print(f"{r.defense:6s} {r.threat:10s} {r.accuracy:.3f}")

abl = ex.run_ablation_distance(cfg, c, dataset=data)
print("distance ablation: default", abl.default_metric, "best", abl.best_metric,
      "transforms per threat", abl.transforms)

with tempfile.TemporaryDirectory() as d:
    report.write_table(Path(d) / "table.csv")
    print((Path(d) / "table.csv").read_text())
