"""Command-line harness: ``python3 -m tetra <command> --config FILE [...]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments as ex
from . import nn
from .config import ConfigError, load_config
from .training import write_loss_history

log = logging.getLogger("tetra")

COMMANDS = ("train", "attack", "eval-tetra", "eval-fetra", "rpgd-analysis", "ablate-vanilla",
            "ablate-distance", "timing", "grid-search", "report")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tetra", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--seed", type=int, help="master seed; re-derives every component seed")
        s.add_argument("--out", type=Path, help="output directory (overrides [experiment] out)")
        s.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
        s.add_argument("--checkpoint", type=Path, help="load this classifier instead of training")
        s.add_argument("-v", "--verbose", action="store_true")
        if name in ("eval-tetra", "eval-fetra", "report"):
            s.add_argument("--dump-transforms", action="store_true",
                           help="write raw transformed images under <out>/transforms")
        if name in ("eval-fetra", "report"):
            s.add_argument("--top-k", type=int, help="override [tetra] top_k")
        if name == "grid-search":
            s.add_argument("--alphas", help="comma-separated step sizes (overrides [grid])")
            s.add_argument("--gammas", help="comma-separated gammas (overrides [grid])")
    return p


def _classifier(args, cfg, dataset, out: Path):
    if args.checkpoint is not None:
        c = nn.load_checkpoint(args.checkpoint)
        if c.input_dim != dataset.dim or c.num_classes != dataset.num_classes:
            raise ConfigError(f"checkpoint is {c.input_dim}->{c.num_classes}, dataset is "
                              f"{dataset.dim}->{dataset.num_classes}")
        return c
    c, history = ex.build_classifier(cfg, dataset)
    nn.save_checkpoint(c, out / "model.ckpt")
    write_loss_history(history, out / "loss.csv")
    return c


def _floats(text):
    return tuple(float(t) for t in text.split(","))


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed_override=args.seed)
    except (ConfigError, ValueError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    if args.threads is not None:
        cfg = replace(cfg, threads=args.threads)
    if getattr(args, "top_k", None) is not None:
        cfg = replace(cfg, tetra=replace(cfg.tetra, top_k=args.top_k))
    out = args.out if args.out is not None else cfg.out
    out.mkdir(parents=True, exist_ok=True)

    try:
        dataset = ex.build_dataset(cfg)
        cmd = args.command
        if cmd == "ablate-vanilla":
            report = ex.run_ablation_vanilla(cfg, dataset=dataset)
            report.write_table(out / "ablation_vanilla.csv", with_classifier=True)
            _print_rows(report.rows, with_classifier=True)
            return 0
        c = _classifier(args, cfg, dataset, out)
        if cmd == "train":
            acc = float((nn.forward(c, dataset.test.images).argmax(1) == dataset.test.labels).mean())
            print(f"clean test accuracy {acc:.4f}; wrote {out / 'model.ckpt'}")
        elif cmd in ("attack", "eval-tetra", "eval-fetra", "report"):
            defenses = {"attack": ("base",), "eval-tetra": ("base", "TETRA"),
                        "eval-fetra": ("base", "FETRA"), "report": ("base", "TETRA", "FETRA")}[cmd]
            if "FETRA" in defenses and cfg.tetra.top_k is None:
                raise ConfigError(f"{cmd} needs [tetra] top_k or --top-k")
            dump = out / "transforms" if getattr(args, "dump_transforms", False) else None
            report = ex.run_table(cfg, c, defenses, dataset=dataset, dump_dir=dump)
            report.write_table(out / "table.csv")
            report.write_verdicts(out / "verdicts.csv")
            _print_rows(report.rows)
        elif cmd == "rpgd-analysis":
            report = ex.run_rpgd_analysis(cfg, c, dataset=dataset)
            report.write_topk(out / "topk.csv")
            for name in ("pgd", "rpgd", "diff"):
                print(f"{name:5s}", " ".join(f"{v:+.3f}" for v in report.topk[name]))
        elif cmd == "ablate-distance":
            abl = ex.run_ablation_distance(cfg, c, dataset=dataset)
            abl.write(out / "ablation_distance.csv")
            _print_rows(abl.rows)
            print(f"default {abl.default_metric}, best {abl.best_metric}")
        elif cmd == "timing":
            report = ex.run_timing(cfg, c, dataset=dataset)
            report.write_timing(out / "timing.csv")
            report.write_timing_counts(out / "timing_counts.csv")
            for t in report.timing:
                print(f"{t.defense:6s} {t.seconds_per_image:.3e}s  x{t.factor:.2f}  "
                      f"{t.transforms_per_image} transforms")
        elif cmd == "grid-search":
            alphas = _floats(args.alphas) if args.alphas else None
            gammas = _floats(args.gammas) if args.gammas else None
            res = ex.grid_search(cfg, alphas, gammas, c, dataset=dataset)
            res.write(out / "grid.csv")
            print(f"best step_size={res.best[0]:g} gamma={res.best[1]:g}")
    except (ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


def _print_rows(rows, with_classifier=False):
    for r in rows:
        prefix = f"{r.classifier:8s} " if with_classifier else ""
        print(f"{prefix}{r.defense:6s} {r.threat:10s} {r.accuracy:.4f}")


def main() -> None:
    sys.exit(run())
