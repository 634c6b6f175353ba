from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from tetra import experiments as ex
from tetra import nn
from tetra.config import load_config

ROOT = Path(__file__).resolve().parents[1]
TOY_CONFIG = ROOT / "configs" / "toy.ini"

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, text = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _criteria[n] = (rep.passed, text)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        passed, text = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {text}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_net(rng, widths):
    """MLP with nonzero biases so ReLU kinks are not all at the origin."""
    c = nn.mlp(list(widths), rng)
    for layer in c.layers:
        if isinstance(layer, nn.Dense):
            layer.bias[:] = rng.uniform(-0.3, 0.3, size=layer.bias.shape)
    return c


@pytest.fixture(scope="session")
def toy_cfg():
    return load_config(TOY_CONFIG)


@pytest.fixture(scope="session")
def toy_data(toy_cfg):
    return ex.build_dataset(toy_cfg)


@pytest.fixture(scope="session")
def toy_at(toy_cfg, toy_data):
    """AT classifier of the default toy benchmark (seen radius = 1/4 of the class distance)."""
    return ex.build_classifier(toy_cfg, toy_data)[0]


@pytest.fixture(scope="session")
def toy_vanilla(toy_cfg, toy_data):
    return ex.build_classifier(toy_cfg, toy_data, adversarial=False)[0]


@pytest.fixture(scope="session")
def small_cfg(toy_cfg):
    """The toy config cut down for fast harness tests."""
    return replace(toy_cfg, max_images=60, train=replace(toy_cfg.train, epochs=3),
                   grid_alphas=(0.05,), grid_gammas=(10.0,), timing_runs=30, timing_warmup=3)
