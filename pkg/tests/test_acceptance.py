"""Acceptance gate, one test per numbered criterion.

These call the same check functions as `forcesim acceptance`, at full
scale, so this file is slow by design: estimator training (criterion 2)
takes several minutes and the imitation ablation (criterion 10) tens of
minutes on one CPU. Everything else finishes in seconds. Run just the
fast ones with

    pytest tests/test_acceptance.py -k "not estimator and not ablation"
"""

import pytest

from forcesim import acceptance
from forcesim.config import Config


@pytest.fixture(scope="module")
def cfg():
    return Config()


def test_c01_position_tracking(cfg):
    passed, detail = acceptance.check_position_tracking(cfg.seed)
    assert passed, detail


def test_c02_estimator_accuracy(cfg, tmp_path):
    passed, detail = acceptance.check_estimator(cfg, str(tmp_path))
    assert passed, detail


def test_c03_matched_force_tracking(cfg):
    passed, detail = acceptance.check_matched_force(cfg.seed)
    assert passed, detail


def test_c04_force_sweep():
    passed, detail = acceptance.check_force_sweep()
    assert passed, detail


def test_c05_mode_properties():
    passed, detail = acceptance.check_mode_properties()
    assert passed, detail


def test_c06_base_compensation():
    passed, detail = acceptance.check_base_compensation()
    assert passed, detail


def test_c07_reward_goldens():
    passed, detail = acceptance.check_rewards()
    assert passed, detail


def test_c08_gradient_checks():
    passed, detail = acceptance.check_gradients()
    assert passed, detail


def test_c09_replay_determinism(cfg, tmp_path):
    passed, detail = acceptance.check_replay_determinism(cfg, str(tmp_path))
    assert passed, detail


def test_c10_imitation_ablation(cfg, tmp_path):
    passed, detail = acceptance.check_ablation(cfg, str(tmp_path))
    assert passed, detail
