"""Experiment drivers: accuracy tables, top-k curves, ablations, timing, grid search.

Images are processed in fixed-size chunks so that results never depend on the
worker count: each chunk's attack seed is derived from (eval seed, threat
index, chunk index) and outputs are reassembled in image order.
"""

from __future__ import annotations

import csv
import logging
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import attacks, defense, nn
from .attacks import ThreatModel
from .config import ConfigError, ExperimentConfig, IdxSpec, derive_seed
from .data import Dataset, Split, gen_dataset, load_idx
from .defense import BatchTransforms, TetraConfig
from .training import EpochLoss, TrainConfig, topk_hits, train

log = logging.getLogger(__name__)

CHUNK = 100
STANDARD = "standard"
# the evaluation attack is multi-restart PGD, not AutoAttack; label it as such
ATTACK_LABEL = "pgd"


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    spec = cfg.dataset
    if isinstance(spec, IdxSpec):
        train_split = load_idx(spec.train_images, spec.train_labels, spec.classes, spec.per_class)
        test_split = load_idx(spec.test_images, spec.test_labels, spec.classes, spec.test_per_class)
        k = len(spec.classes) if spec.classes else int(max(train_split.labels.max(), test_split.labels.max())) + 1
        return Dataset(train_split, test_split, k)
    return gen_dataset(spec)


def build_classifier(cfg: ExperimentConfig, dataset: Dataset,
                     adversarial: bool | None = None) -> tuple[nn.Classifier, list[EpochLoss]]:
    """Train the configured classifier; ``adversarial=False`` forces vanilla training."""
    tcfg = cfg.train
    if adversarial is False:
        tcfg = replace(tcfg, adversarial=None)
    elif adversarial is True and tcfg.adversarial is None:
        raise ConfigError("[train] adversarial threat model is required here")
    widths = [dataset.dim, *cfg.hidden, dataset.num_classes]
    init = nn.mlp(widths, np.random.default_rng(cfg.model_seed))
    log.info("training %s classifier %s", "AT" if tcfg.adversarial else "vanilla", widths)
    return train(init, dataset.train.images, dataset.train.labels, tcfg)


def eval_split(cfg: ExperimentConfig, dataset: Dataset) -> Split:
    return dataset.test if cfg.max_images is None else dataset.test.take(cfg.max_images)


def _chunks(n: int):
    return [(i, slice(s, min(s + CHUNK, n))) for i, s in enumerate(range(0, n, CHUNK))]


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def craft(cfg: ExperimentConfig, c: nn.Classifier, split: Split, tm: ThreatModel | None,
          threat_index: int, kind: str = "pgd") -> np.ndarray:
    """Attack the base classifier chunk by chunk (``kind`` is ``pgd`` or ``rpgd``)."""
    if tm is None:
        return split.images
    if kind == "rpgd":
        acfg = cfg.eval_attack.config(tm, cfg.rpgd_target)
        fn = attacks.rpgd
    else:
        acfg = cfg.eval_attack.config(tm)
        fn = attacks.pgd_untargeted

    def run(item):
        i, sl = item
        seed = derive_seed(cfg.eval_seed, threat_index, i)
        return fn(c, split.images[sl], split.labels[sl], tm, acfg, seed=seed)

    return np.concatenate(_map(run, _chunks(len(split)), cfg.threads))


def transform(cfg: ExperimentConfig, c: nn.Classifier, images: np.ndarray,
              tcfg: TetraConfig) -> BatchTransforms:
    parts = _map(lambda item: defense.transform_batch(c, images[item[1]], tcfg),
                 _chunks(images.shape[0]), cfg.threads)
    return BatchTransforms(np.concatenate([p.deltas for p in parts]),
                           np.concatenate([p.mask for p in parts]))


def _fmt(x: float) -> str:
    return f"{x:.6f}"


@dataclass
class ReportRow:
    defense: str
    threat: str
    accuracy: float
    classifier: str = ""


@dataclass
class TimingRow:
    defense: str
    seconds_per_image: float
    factor: float
    transforms_per_image: int


@dataclass
class EvaluationReport:
    rows: list[ReportRow] = field(default_factory=list)
    verdicts: list[tuple] = field(default_factory=list)  # (image, threat, defense, label, prediction)
    topk: dict[str, list[float]] = field(default_factory=dict)
    timing: list[TimingRow] = field(default_factory=list)
    transforms: dict[str, int] = field(default_factory=dict)  # per-threat transformation counts
    notes: dict[str, str] = field(default_factory=dict)

    def accuracy(self, defense: str, threat: str, classifier: str = "") -> float:
        for r in self.rows:
            if r.defense == defense and r.threat == threat and r.classifier == classifier:
                return r.accuracy
        raise KeyError((defense, threat, classifier))

    def threats(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.threat not in seen:
                seen.append(r.threat)
        return seen

    def write_table(self, path, with_classifier: bool = False) -> None:
        """``defense,threat,norm,epsilon,attack,accuracy``, prefixed by ``classifier`` if asked."""
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            head = ["defense", "threat", "norm", "epsilon", "attack", "accuracy"]
            w.writerow(["classifier", *head] if with_classifier else head)
            for r in self.rows:
                if r.threat == STANDARD:
                    norm, eps, atk = "", "0", "none"
                else:
                    tm = ThreatModel.parse(r.threat)
                    norm, eps, atk = tm.norm, f"{tm.epsilon:g}", ATTACK_LABEL
                row = [r.defense, r.threat, norm, eps, atk, _fmt(r.accuracy)]
                w.writerow([r.classifier, *row] if with_classifier else row)

    def write_verdicts(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["image", "threat", "defense", "label", "prediction"])
            for v in sorted(self.verdicts, key=lambda v: (v[1], v[2], v[0])):
                w.writerow(v)

    def write_topk(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["curve", "k", "value"])
            for name in ("pgd", "rpgd", "diff"):
                for k, v in enumerate(self.topk[name], start=1):
                    w.writerow([name, k, _fmt(v)])

    def write_timing(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["defense", "seconds_per_image", "factor", "transforms_per_image"])
            for t in self.timing:
                w.writerow([t.defense, f"{t.seconds_per_image:.6e}", f"{t.factor:.3f}",
                            t.transforms_per_image])

    def write_timing_counts(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["defense", "transforms_per_image"])
            for t in self.timing:
                w.writerow([t.defense, t.transforms_per_image])


def _threat_list(cfg: ExperimentConfig):
    return [(STANDARD, None)] + [(tm.label, tm) for tm in cfg.threat_models]


def _dump(dump_dir, name, label, bt, x):
    if dump_dir is not None:
        Path(dump_dir).mkdir(parents=True, exist_ok=True)
        tag = label.replace(":", "_")
        defense.dump_transformed(bt, x, Path(dump_dir) / f"{name}_{tag}.bin")


def run_table(cfg: ExperimentConfig, c: nn.Classifier | None = None,
              defenses=("base", "TETRA", "FETRA"), dataset: Dataset | None = None,
              dump_dir: Path | None = None) -> EvaluationReport:
    """Base / TETRA / FETRA accuracy for the clean set and every threat model.

    Attacks target the base classifier; the defenses then classify the
    resulting images. FETRA rows need ``[tetra] top_k``. With ``dump_dir``
    every transformed image is written there as a raw dump.
    """
    dataset = dataset or build_dataset(cfg)
    if c is None:
        c, _ = build_classifier(cfg, dataset)
    split = eval_split(cfg, dataset)
    tetra_cfg = replace(cfg.tetra, top_k=None)
    report = EvaluationReport()
    for ti, (label, tm) in enumerate(_threat_list(cfg)):
        x = craft(cfg, c, split, tm, ti)
        preds = {}
        if "base" in defenses:
            preds["base"] = nn.forward(c, x).argmax(axis=1)
        if "TETRA" in defenses:
            bt = transform(cfg, c, x, tetra_cfg)
            preds["TETRA"] = bt.predictions(tetra_cfg.distance)
            report.transforms[f"TETRA/{label}"] = bt.n_transforms
            _dump(dump_dir, "TETRA", label, bt, x)
        if "FETRA" in defenses and cfg.tetra.top_k is not None:
            bt = transform(cfg, c, x, cfg.tetra)
            preds["FETRA"] = bt.predictions(cfg.tetra.distance)
            report.transforms[f"FETRA/{label}"] = bt.n_transforms
            _dump(dump_dir, "FETRA", label, bt, x)
        for name, p in preds.items():
            report.rows.append(ReportRow(name, label, float((p == split.labels).mean())))
            report.verdicts.extend(
                (i, label, name, int(y), int(q)) for i, (y, q) in enumerate(zip(split.labels, p)))
        log.info("%s: %s", label, {k: round(float((v == split.labels).mean()), 4) for k, v in preds.items()})
    return report


def run_attack(cfg: ExperimentConfig, c: nn.Classifier | None = None,
               dataset: Dataset | None = None) -> EvaluationReport:
    return run_table(cfg, c, defenses=("base",), dataset=dataset)


def run_rpgd_analysis(cfg: ExperimentConfig, c: nn.Classifier | None = None,
                      dataset: Dataset | None = None) -> EvaluationReport:
    """Top-k accuracy for k = 1..K after PGD and after RPGD at the same budget.

    Both attacks share radius, steps, restarts and step size; ``diff`` is
    PGD minus RPGD.
    """
    dataset = dataset or build_dataset(cfg)
    if c is None:
        c, _ = build_classifier(cfg, dataset)
    split = eval_split(cfg, dataset)
    tm = cfg.rpgd_threat
    k_all = c.num_classes
    curves = {}
    for kind in ("pgd", "rpgd"):
        x = craft(cfg, c, split, tm if tm.epsilon > 0 else None, 0, kind)
        logits = nn.forward(c, x)
        curves[kind] = [float(topk_hits(logits, split.labels, k).mean()) for k in range(1, k_all + 1)]
    curves["diff"] = [p - r for p, r in zip(curves["pgd"], curves["rpgd"])]
    report = EvaluationReport(topk=curves)
    report.notes["threat"] = tm.label
    return report


def run_ablation_vanilla(cfg: ExperimentConfig, dataset: Dataset | None = None) -> EvaluationReport:
    """Base and TETRA accuracy for a vanilla and an adversarially trained classifier."""
    dataset = dataset or build_dataset(cfg)
    report = EvaluationReport()
    for name, adv in (("vanilla", False), ("AT", True)):
        c, _ = build_classifier(cfg, dataset, adversarial=adv)
        sub = run_table(cfg, c, defenses=("base", "TETRA"), dataset=dataset)
        for r in sub.rows:
            report.rows.append(ReportRow(r.defense, r.threat, r.accuracy, classifier=name))
    return report


@dataclass
class DistanceAblation:
    rows: list[ReportRow]
    transforms: dict[str, int]
    images: int
    default_metric: str = "L2"
    best_metric: str = "L2"

    def write(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["metric", "threat", "accuracy", "default", "best"])
            for r in self.rows:
                w.writerow([r.defense, r.threat, _fmt(r.accuracy),
                            int(r.defense == self.default_metric), int(r.defense == self.best_metric)])


def run_ablation_distance(cfg: ExperimentConfig, c: nn.Classifier | None = None,
                          dataset: Dataset | None = None, metrics=("L2", "L1")) -> DistanceAblation:
    """Classify one shared set of TETRA transformations under several metrics.

    ``best`` flags the metric with the higher mean accuracy over all threats;
    ties keep the default (first) metric.
    """
    dataset = dataset or build_dataset(cfg)
    if c is None:
        c, _ = build_classifier(cfg, dataset)
    split = eval_split(cfg, dataset)
    tcfg = replace(cfg.tetra, top_k=None)
    rows, counts = [], {}
    for ti, (label, tm) in enumerate(_threat_list(cfg)):
        x = craft(cfg, c, split, tm, ti)
        bt = transform(cfg, c, x, tcfg)
        counts[label] = bt.n_transforms
        for m in metrics:
            rows.append(ReportRow(m, label, float((bt.predictions(m) == split.labels).mean())))
    means = {m: np.mean([r.accuracy for r in rows if r.defense == m]) for m in metrics}
    best = metrics[0]
    for m in metrics[1:]:
        if means[m] > means[best]:
            best = m
    rows.sort(key=lambda r: (metrics.index(r.defense), [t for t, _ in _threat_list(cfg)].index(r.threat)))
    return DistanceAblation(rows, counts, len(split), metrics[0], best)


def run_timing(cfg: ExperimentConfig, c: nn.Classifier | None = None,
               dataset: Dataset | None = None) -> EvaluationReport:
    """Median single-image wall-clock for base, TETRA and (if configured) FETRA."""
    dataset = dataset or build_dataset(cfg)
    if c is None:
        c, _ = build_classifier(cfg, dataset)
    images = dataset.test.images
    tetra_cfg = replace(cfg.tetra, top_k=None)
    runners = {
        "base": (lambda x: int(nn.forward(c, x).argmax()), 0),
        "TETRA": (lambda x: defense.tetra_classify(c, x, tetra_cfg).predicted_class, c.num_classes),
    }
    if cfg.tetra.top_k is not None:
        runners["FETRA"] = (lambda x: defense.fetra_classify(c, x, cfg.tetra).predicted_class,
                            min(cfg.tetra.top_k, c.num_classes))
    report = EvaluationReport()
    medians = {}
    for name, (fn, _) in runners.items():
        for i in range(cfg.timing_warmup):
            fn(images[i % len(images)])
        samples = []
        for i in range(cfg.timing_runs):
            x = images[i % len(images)]
            t0 = time.perf_counter()
            fn(x)
            samples.append(time.perf_counter() - t0)
        medians[name] = statistics.median(samples)
    for name, (_, count) in runners.items():
        report.timing.append(TimingRow(name, medians[name], medians[name] / medians["base"], count))
    return report


@dataclass
class GridResult:
    best: tuple[float, float]
    rows: list[tuple[float, float, float, dict]]  # (alpha, gamma, score, per-threat accuracy)

    def write(self, path) -> None:
        threats = list(self.rows[0][3]) if self.rows else []
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["step_size", "gamma", "score", *threats, "selected"])
            for a, g, s, acc in self.rows:
                w.writerow([f"{a:g}", f"{g:g}", _fmt(s), *(_fmt(acc[t]) for t in threats),
                            int((a, g) == self.best)])


def grid_search(cfg: ExperimentConfig, alphas=None, gammas=None, c: nn.Classifier | None = None,
                dataset: Dataset | None = None) -> GridResult:
    """Pick the (step size, gamma) maximizing mean TETRA accuracy over clean + threats.

    Ties keep the earliest grid point (alphas outer, gammas inner).
    """
    alphas = tuple(alphas if alphas is not None else cfg.grid_alphas)
    gammas = tuple(gammas if gammas is not None else cfg.grid_gammas)
    if not alphas or not gammas:
        raise ConfigError("grid search needs nonempty [grid] alphas and gammas")
    dataset = dataset or build_dataset(cfg)
    if c is None:
        c, _ = build_classifier(cfg, dataset)
    split = eval_split(cfg, dataset)
    sets = [(label, craft(cfg, c, split, tm, ti)) for ti, (label, tm) in enumerate(_threat_list(cfg))]
    rows = []
    best, best_score = None, -np.inf
    for a in alphas:
        for g in gammas:
            tcfg = replace(cfg.tetra, step_size=a, gamma=g, top_k=None)
            acc = {label: float((transform(cfg, c, x, tcfg).predictions(tcfg.distance) == split.labels).mean())
                   for label, x in sets}
            score = float(np.mean(list(acc.values())))
            rows.append((a, g, score, acc))
            if score > best_score:
                best, best_score = (a, g), score
            log.info("alpha=%g gamma=%g score=%.4f", a, g, score)
    return GridResult(best, rows)
