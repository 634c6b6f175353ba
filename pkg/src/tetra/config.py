"""Experiment configuration: INI-style sections of flat key/value pairs.

Every section is optional except ``[experiment]`` which must carry the master
``seed``. Component seeds (dataset, model, training, evaluation) default to
fixed derivations of the master seed unless set explicitly.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, RankTrue, ThreatModel
from .data import GaussianSpec
from .defense import TetraConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def derive_seed(master: int, *path: int) -> int:
    return int(np.random.SeedSequence([master, *path]).generate_state(1)[0])


# fixed stream ids for derive_seed
DATASET_STREAM, MODEL_STREAM, TRAIN_STREAM, EVAL_STREAM = 1, 2, 3, 4


@dataclass(frozen=True)
class IdxSpec:
    train_images: Path
    train_labels: Path
    test_images: Path
    test_labels: Path
    classes: tuple[int, ...] | None = None
    per_class: int | None = None
    test_per_class: int | None = None


@dataclass(frozen=True)
class AttackSchedule:
    """How PGD is run for a given radius: ``step_size = step_factor * eps / steps``."""
    steps: int = 20
    restarts: int = 2
    step_factor: float = 2.5

    def config(self, tm: ThreatModel, target=None) -> AttackConfig:
        step = self.step_factor * tm.epsilon / self.steps if tm.epsilon > 0 else 1.0
        kw = {} if target is None else {"target": target}
        return AttackConfig(self.steps, step, self.restarts, **kw)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    dataset: GaussianSpec | IdxSpec
    hidden: tuple[int, ...] = (64, 64)
    model_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    train_attack: AttackSchedule = AttackSchedule(10, 1, 2.5)
    threat_models: tuple[ThreatModel, ...] = ()
    eval_attack: AttackSchedule = AttackSchedule()
    eval_seed: int = 0
    max_images: int | None = None
    tetra: TetraConfig = field(default_factory=TetraConfig)
    rpgd_threat: ThreatModel = ThreatModel("L2", 0.6)
    rpgd_target: RankTrue = RankTrue(1)
    grid_alphas: tuple[float, ...] = ()
    grid_gammas: tuple[float, ...] = ()
    timing_runs: int = 30
    timing_warmup: int = 3
    out: Path = Path("results")
    threads: int = 1
    name: str = "experiment"


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _threats(text: str) -> tuple[ThreatModel, ...]:
    text = text.strip()
    if not text or text.lower() == "none":
        return ()
    return tuple(ThreatModel.parse(t) for t in text.split(","))


def _opt_seed(sec, key, master, stream):
    return sec.getint(key) if key in sec else derive_seed(master, stream)


def load_config_text(text: str, base_dir=".", seed_override: int | None = None) -> ExperimentConfig:
    """Parse config text; ``seed_override`` replaces the master seed and
    re-derives every component seed from it, ignoring explicit ones."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    cp.read_string(text)
    base_dir = Path(base_dir)
    empty = configparser.SectionProxy(cp, "DEFAULT")

    def section(name):
        return cp[name] if cp.has_section(name) else empty

    exp = section("experiment")
    if "seed" not in exp and seed_override is None:
        raise ConfigError("[experiment] seed is required")
    master = seed_override if seed_override is not None else exp.getint("seed")

    ds = section("dataset")
    kind = ds.get("kind", "gaussian")
    dataset_seed = _opt_seed(ds, "seed", master, DATASET_STREAM) if seed_override is None \
        else derive_seed(master, DATASET_STREAM)
    if kind == "gaussian":
        means = None
        if "means" in ds:
            means = tuple(_floats(row) for row in ds["means"].split("|"))
        dataset = GaussianSpec(
            classes=ds.getint("classes", 4),
            dim=ds.getint("dim", 16),
            separation=ds.getfloat("separation", 1.0),
            cov_scale=ds.getfloat("cov_scale", 0.03),
            train_per_class=ds.getint("train_per_class", 500),
            test_per_class=ds.getint("test_per_class", 125),
            seed=dataset_seed,
            means=means,
        )
    elif kind == "idx":
        paths = {}
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if key not in ds:
                raise ConfigError(f"[dataset] kind = idx needs {key}")
            p = Path(ds[key])
            p = p if p.is_absolute() else base_dir / p
            if not p.exists():
                raise ConfigError(f"[dataset] {key} = {p} does not exist")
            paths[key] = p
        dataset = IdxSpec(
            **paths,
            classes=_ints(ds["classes"]) if "classes" in ds else None,
            per_class=ds.getint("per_class") if "per_class" in ds else None,
            test_per_class=ds.getint("test_per_class") if "test_per_class" in ds else None,
        )
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")

    md = section("model")
    hidden = _ints(md.get("hidden", "64,64"))
    model_seed = derive_seed(master, MODEL_STREAM) if seed_override is not None \
        else _opt_seed(md, "seed", master, MODEL_STREAM)

    tr = section("train")
    adv = _threats(tr.get("adversarial", "none"))
    if len(adv) > 1:
        raise ConfigError("[train] adversarial takes a single threat model")
    train_attack = AttackSchedule(tr.getint("attack_steps", 10), tr.getint("attack_restarts", 1),
                                  tr.getfloat("attack_step_factor", 2.5))
    train = TrainConfig(
        epochs=tr.getint("epochs", 20),
        batch_size=tr.getint("batch_size", 64),
        learning_rate=tr.getfloat("learning_rate", 0.05),
        momentum=tr.getfloat("momentum", 0.9),
        seed=derive_seed(master, TRAIN_STREAM) if seed_override is not None
        else _opt_seed(tr, "seed", master, TRAIN_STREAM),
        adversarial=(adv[0], train_attack.config(adv[0])) if adv else None,
    )

    ev = section("eval")
    eval_attack = AttackSchedule(ev.getint("attack_steps", 20), ev.getint("attack_restarts", 2),
                                 ev.getfloat("attack_step_factor", 2.5))

    te = section("tetra")
    top_k = te.get("top_k", "none")
    tetra = TetraConfig(
        steps=te.getint("steps", 30),
        step_size=te.getfloat("step_size", 0.05),
        gamma=te.getfloat("gamma", 10.0),
        distance=te.get("distance", "L2"),
        top_k=None if top_k.lower() == "none" else int(top_k),
    )

    rp = section("rpgd")
    rpgd_threat = _threats(rp.get("threat_model", "L2:0.6"))
    eps_r = rp.get("eps_r", "auto")
    rpgd_target = RankTrue(
        k=rp.getint("k", 1),
        eps_r=None if eps_r == "auto" else float(eps_r),
        eps_r_scale=rp.getfloat("eps_r_scale", 0.1),
    )

    gr = section("grid")
    tm = section("timing")

    cfg = ExperimentConfig(
        seed=master,
        dataset=dataset,
        hidden=hidden,
        model_seed=model_seed,
        train=train,
        train_attack=train_attack,
        threat_models=_threats(ev.get("threat_models", "")),
        eval_attack=eval_attack,
        eval_seed=derive_seed(master, EVAL_STREAM) if seed_override is not None
        else _opt_seed(ev, "seed", master, EVAL_STREAM),
        max_images=ev.getint("max_images") if "max_images" in ev else None,
        tetra=tetra,
        rpgd_threat=rpgd_threat[0] if rpgd_threat else ThreatModel("L2", 0.0),
        rpgd_target=rpgd_target,
        grid_alphas=_floats(gr.get("alphas", "")),
        grid_gammas=_floats(gr.get("gammas", "")),
        timing_runs=tm.getint("runs", 30),
        timing_warmup=tm.getint("warmup", 3),
        out=Path(exp.get("out", "results")),
        threads=exp.getint("threads", 1),
        name=exp.get("name", "experiment"),
    )
    return cfg


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    path = Path(path)
    return load_config_text(path.read_text(), base_dir=path.parent, seed_override=seed_override)
