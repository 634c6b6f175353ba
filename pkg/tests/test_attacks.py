import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tetra import nn
from tetra.attacks import (L2, LINF, AttackConfig, RankTrue, Targeted, ThreatModel, clamp_image,
                           hard_rank, pgd_targeted, pgd_untargeted, project_ball, rpgd)
from conftest import random_net


def _norm(d, norm):
    return np.sqrt((d ** 2).sum(axis=-1)) if norm == L2 else np.abs(d).max(axis=-1)


class TestThreatModel:
    def test_parse_and_label(self):
        tm = ThreatModel.parse("linf:0.03")
        assert tm == ThreatModel(LINF, 0.03) and tm.label == "Linf:0.03"

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            ThreatModel("L3", 1.0)
        with pytest.raises(ValueError):
            ThreatModel(L2, -0.1)


class TestProjection:
    def test_interior_unchanged(self):
        d = np.array([0.1, -0.2, 0.05])
        np.testing.assert_array_equal(project_ball(d, ThreatModel(L2, 1.0)), d)
        np.testing.assert_array_equal(project_ball(d, ThreatModel(LINF, 0.3)), d)

    def test_radial(self):
        np.testing.assert_allclose(project_ball(np.array([3.0, 4.0]), ThreatModel(L2, 1.0)), [0.6, 0.8])

    def test_per_row(self):
        d = np.array([[3.0, 4.0], [0.3, 0.4]])
        np.testing.assert_allclose(project_ball(d, ThreatModel(L2, 1.0)), [[0.6, 0.8], [0.3, 0.4]])

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=10), st.floats(0, 5),
           st.sampled_from([L2, LINF]))
    def test_bounded_and_idempotent(self, values, eps, norm):
        tm = ThreatModel(norm, eps)
        p = project_ball(np.array(values), tm)
        assert _norm(p, norm) <= eps + 1e-12
        np.testing.assert_allclose(project_ball(p, tm), p, rtol=1e-15, atol=1e-15)
        if norm == LINF:
            assert np.all(np.abs(p) <= eps)


class TestClamp:
    def test_examples(self):
        np.testing.assert_array_equal(clamp_image([0.0, 0.4, 1.0]), [0.0, 0.4, 1.0])
        assert clamp_image(-0.2) == 0.0

    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=8))
    def test_idempotent(self, values):
        once = clamp_image(values)
        np.testing.assert_array_equal(clamp_image(once), once)


def _linear2(w):
    return nn.Classifier([nn.Dense(np.asarray(w, dtype=float), np.zeros(2))], 2)


class TestPGD:
    def test_zero_radius_identity(self, rng):
        c = random_net(rng, [4, 6, 3])
        x = rng.uniform(size=(5, 4))
        y = rng.integers(0, 3, size=5)
        for norm in (L2, LINF):
            tm = ThreatModel(norm, 0.0)
            np.testing.assert_array_equal(pgd_untargeted(c, x, y, tm, AttackConfig()), x)
            np.testing.assert_array_equal(pgd_targeted(c, x, 0, tm, AttackConfig()), x)

    def test_linear_linf_one_step(self):
        w = np.array([[1.0, -2.0], [-0.5, 3.0]])
        x = np.array([[0.5, 0.5]])
        cfg = AttackConfig(steps=1, step_size=0.1, restarts=1)
        adv = pgd_untargeted(_linear2(w), x, [0], ThreatModel(LINF, 0.1), cfg)
        np.testing.assert_allclose(adv, x + 0.1 * np.sign(w[1] - w[0]))

    def test_linear_l2_one_step(self):
        w = np.array([[1.0, -2.0], [-0.5, 3.0]])
        x = np.array([[0.5, 0.5]])
        cfg = AttackConfig(steps=1, step_size=0.1, restarts=1)
        adv = pgd_untargeted(_linear2(w), x, [0], ThreatModel(L2, 0.1), cfg)
        diff = w[1] - w[0]
        np.testing.assert_allclose(adv, x + 0.1 * diff / np.linalg.norm(diff))

    def test_zero_gradient_skips_step(self):
        c = nn.Classifier([nn.Dense(np.zeros((2, 3)), np.zeros(2))], 2)
        x = np.full((2, 3), 0.5)
        adv = pgd_untargeted(c, x, [0, 1], ThreatModel(L2, 0.3), AttackConfig(restarts=1))
        np.testing.assert_array_equal(adv, x)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from([L2, LINF]), st.floats(0.01, 1.0))
    def test_output_feasible(self, seed, norm, eps):
        r = np.random.default_rng(seed)
        c = random_net(r, [5, 6, 3])
        x = r.uniform(size=(4, 5))
        y = r.integers(0, 3, size=4)
        tm = ThreatModel(norm, eps)
        for adv in (pgd_untargeted(c, x, y, tm, AttackConfig(5, eps / 2, 2), seed=seed),
                    pgd_targeted(c, x, 1, tm, AttackConfig(5, eps / 2, 2), seed=seed)):
            assert np.all((adv >= 0) & (adv <= 1))
            assert np.all(_norm(adv - x, norm) <= eps + 1e-12)

    def test_deterministic_given_seed(self, rng):
        c = random_net(rng, [5, 6, 3])
        x = rng.uniform(size=(6, 5))
        y = rng.integers(0, 3, size=6)
        tm, cfg = ThreatModel(L2, 0.4), AttackConfig(5, 0.1, 3)
        a = pgd_untargeted(c, x, y, tm, cfg, seed=7)
        np.testing.assert_array_equal(a, pgd_untargeted(c, x, y, tm, cfg, seed=7))

    def test_single_restart_ignores_seed(self, rng):
        # restart 0 starts from delta = 0
        c = random_net(rng, [5, 6, 3])
        x = rng.uniform(size=(6, 5))
        y = rng.integers(0, 3, size=6)
        tm, cfg = ThreatModel(L2, 0.4), AttackConfig(5, 0.1, 1)
        np.testing.assert_array_equal(pgd_untargeted(c, x, y, tm, cfg, seed=1),
                                      pgd_untargeted(c, x, y, tm, cfg, seed=2))

    def test_restarts_never_lower_loss(self, rng):
        c = random_net(rng, [5, 6, 3])
        x = rng.uniform(size=(20, 5))
        y = rng.integers(0, 3, size=20)
        tm = ThreatModel(L2, 0.3)
        one = pgd_untargeted(c, x, y, tm, AttackConfig(4, 0.1, 1))
        many = pgd_untargeted(c, x, y, tm, AttackConfig(4, 0.1, 4))
        l1 = nn.per_sample_cross_entropy(nn.forward(c, one), y)
        lm = nn.per_sample_cross_entropy(nn.forward(c, many), y)
        assert np.all(lm >= l1)

    def test_trained_accuracy_drops(self, toy_at, toy_data):
        test = toy_data.test.take(200)
        adv = pgd_untargeted(toy_at, test.images, test.labels, ThreatModel(L2, 0.5), AttackConfig(20, 0.0625, 2))
        clean = (nn.forward(toy_at, test.images).argmax(1) == test.labels).mean()
        robust = (nn.forward(toy_at, adv).argmax(1) == test.labels).mean()
        assert robust < clean


class TestTargeted:
    def test_current_prediction_kept(self, toy_at, toy_data):
        x = toy_data.test.images[:50]
        pred = nn.forward(toy_at, x).argmax(1)
        adv = pgd_targeted(toy_at, x, pred, ThreatModel(L2, 0.05), AttackConfig(10, 0.01, 1))
        np.testing.assert_array_equal(nn.forward(toy_at, adv).argmax(1), pred)

    def test_beats_untargeted_flip_rate(self, toy_at, toy_data):
        test = toy_data.test.take(200)
        keep = test.labels != 0
        x, y = test.images[keep], test.labels[keep]
        tm, cfg = ThreatModel(L2, 0.8), AttackConfig(20, 0.1, 1)
        targeted = (nn.forward(toy_at, pgd_targeted(toy_at, x, 0, tm, cfg)).argmax(1) == 0).mean()
        untargeted = (nn.forward(toy_at, pgd_untargeted(toy_at, x, y, tm, cfg)).argmax(1) == 0).mean()
        assert targeted > untargeted


class TestRPGD:
    def test_requires_rank_target(self, rng):
        c = random_net(rng, [3, 4, 3])
        with pytest.raises(ValueError):
            rpgd(c, np.zeros((1, 3)), [0], ThreatModel(L2, 0.1), AttackConfig())

    def test_k_at_least_classes(self, rng):
        c = random_net(rng, [3, 4, 3])
        with pytest.raises(ValueError, match="k=3"):
            rpgd(c, np.zeros((1, 3)), [0], ThreatModel(L2, 0.1), AttackConfig(target=RankTrue(3)))

    def test_zero_radius_identity(self, rng):
        c = random_net(rng, [3, 4, 3])
        x = rng.uniform(size=(4, 3))
        y = rng.integers(0, 3, size=4)
        adv = rpgd(c, x, y, ThreatModel(LINF, 0.0), AttackConfig(target=RankTrue(1)))
        np.testing.assert_array_equal(adv, x)
        np.testing.assert_array_equal(hard_rank(nn.forward(c, adv), y), hard_rank(nn.forward(c, x), y))

    def test_pushes_true_class_down(self, toy_at, toy_data):
        test = toy_data.test.take(100)
        tm = ThreatModel(L2, 0.6)
        adv = rpgd(toy_at, test.images, test.labels, tm, AttackConfig(20, 0.075, 1, RankTrue(1, eps_r=10.0)))
        before = hard_rank(nn.forward(toy_at, test.images), test.labels)
        after = hard_rank(nn.forward(toy_at, adv), test.labels)
        assert after.mean() > before.mean() + 1

    def test_hard_rank(self):
        logits = np.array([[0.1, 0.9, 0.5], [1.0, 1.0, 0.0]])
        np.testing.assert_array_equal(hard_rank(logits, [2, 1]), [2, 2])

    def test_targeted_config_target_ignored_by_pgd(self, rng):
        # the target field only matters for rpgd; pgd_targeted takes labels explicitly
        c = random_net(rng, [3, 4, 3])
        x = rng.uniform(size=(2, 3))
        cfg = AttackConfig(3, 0.1, 1, Targeted(2))
        np.testing.assert_array_equal(pgd_targeted(c, x, 2, ThreatModel(L2, 0.2), cfg),
                                      pgd_targeted(c, x, 2, ThreatModel(L2, 0.2), AttackConfig(3, 0.1, 1)))
