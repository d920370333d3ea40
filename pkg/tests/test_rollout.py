"""SimSession tick mechanics: action quantization, label timing,
determinism, and the windowed tracking metric."""

import numpy as np
import pytest

from forcesim.control import CommandBundle, ControlMode
from forcesim.estimator import EST_DIM
from forcesim.plant import (PlantParams, SpringLatch, Wall, action_to_target,
                            vec3)
from forcesim.rollout import SimSession, tracking_windows
from forcesim.scheduler import CommandStream, DisturbanceStream


def test_recorded_action_reconstructs_target_exactly():
    session = SimSession(mode=ControlMode.force_control(),
                         estimate_source="truth",
                         env=Wall(point=(0.55, 0, 0), normal=(-1, 0, 0)))
    cmd = CommandBundle(x_ee=vec3(0.58, 0.1, -0.05), f_ee=vec3(20, 0, 0))
    dist = DisturbanceStream(seed=11, lo=-30, hi=30)
    prev = session.prev_action.copy()
    for _ in range(100):
        log = session.tick(cmd, dist.value(session.state.t))
        rebuilt = action_to_target(log.action, session.params)
        assert np.array_equal(rebuilt, log.x_target)  # bitwise
        assert np.array_equal(log.obs.a_prev, prev)
        assert np.all(np.abs(log.action) <= 1.0)
        prev = log.action


def test_truth_labels_lag_one_step():
    # The force label produced at tick k is the net environment force that
    # acted over the step taken at tick k-1; position/velocity labels are
    # the pre-step state at tick k.
    session = SimSession(mode=ControlMode.position(),
                         estimate_source="truth",
                         env=Wall(point=(0.52, 0, 0), normal=(-1, 0, 0)))
    dist = DisturbanceStream(seed=5, lo=-25, hi=25)
    cmd = CommandBundle(x_ee=vec3(0.56, 0, 0))
    logs = session.run(80, lambda t: cmd,
                       f_ee_fn=lambda t: dist.value(t))
    for k in range(1, len(logs)):
        expect = logs[k - 1].state.f_contact + logs[k - 1].f_ee_ext
        assert np.array_equal(logs[k].est_truth.f_ee, expect)
        assert np.array_equal(logs[k].est_truth.x_ee,
                              logs[k - 1].state.x_ee)
        assert np.array_equal(logs[k].est_truth.v_base,
                              logs[k - 1].state.v_base)
    # First tick: nothing has acted yet.
    assert np.array_equal(logs[0].est_truth.f_ee, vec3())


def test_target_norm_clamp_keeps_actions_legal():
    session = SimSession(mode=ControlMode.force_control(),
                         estimate_source="zero")
    # A commanded force of +60 N on each axis shifts the raw target by
    # 0.6 m per axis past an already-far setpoint.
    cmd = CommandBundle(x_ee=vec3(0.85, 0.85, 0.85), f_ee=vec3(60, 60, 60))
    log = session.tick(cmd)
    bound = 2.0 * session.params.workspace.r_max
    assert float(np.linalg.norm(log.x_target)) <= bound
    assert np.all(np.abs(log.action) <= 1.0)
    assert np.array_equal(action_to_target(log.action, session.params),
                          log.x_target)


def test_reset_restores_scene_and_buffers():
    env = SpringLatch(point=(0.6, 0, 0), normal=(-1, 0, 0))
    session = SimSession(mode=ControlMode.force_control(),
                         estimate_source="truth", env=env)
    cmd = CommandBundle(x_ee=vec3(0.6, 0, 0), f_ee=vec3(40, 0, 0))
    for _ in range(200):
        session.tick(cmd)
    assert env.state != "closed"
    assert len(session.history) > 0
    session.reset()
    assert env.state == "closed"
    assert len(session.history) == 0
    assert np.array_equal(session.state.x_ee, session.params.q_default)
    assert np.array_equal(
        session.prev_action,
        SimSession(estimate_source="truth").prev_action)


def test_kick_changes_base_velocity_only():
    session = SimSession(estimate_source="truth")
    x_before = session.state.x_ee.copy()
    session.kick((0.5, -0.2, 0.0))
    assert np.allclose(session.state.v_base, (0.5, -0.2, 0.0))
    assert np.array_equal(session.state.x_ee, x_before)


def test_zero_source_yields_zero_estimates():
    session = SimSession(mode=ControlMode.impedance(),
                         estimate_source="zero",
                         env=Wall(point=(0.5, 0, 0), normal=(-1, 0, 0)))
    cmd = CommandBundle(x_ee=vec3(0.55, 0, 0))
    for _ in range(40):
        log = session.tick(cmd)
        assert np.array_equal(log.est.as_vector(), np.zeros(EST_DIM))
    # with no compensation the commanded point is passed straight through
    assert np.allclose(log.x_target, cmd.x_ee, atol=1e-12)


def test_session_rejects_bad_source_and_missing_model():
    with pytest.raises(ValueError):
        SimSession(estimate_source="psychic")
    with pytest.raises(ValueError):
        SimSession(estimate_source="model")


def test_run_is_deterministic():
    def make():
        s = SimSession(params=PlantParams(friction=1.3),
                       mode=ControlMode.force_control(),
                       estimate_source="oracle",
                       env=Wall(point=(0.55, 0, 0), normal=(-1, 0, 0)))
        cmds = CommandStream(seed=7)
        dist = DisturbanceStream(seed=8, lo=-40, hi=40)
        return s.run(150, cmds.value, f_ee_fn=dist.value)

    a, b = make(), make()
    for la, lb in zip(a, b):
        assert np.array_equal(la.state.x_ee, lb.state.x_ee)
        assert np.array_equal(la.action, lb.action)
        assert np.array_equal(la.est.as_vector(), lb.est.as_vector())


def test_tracking_windows_drop_settling_blocks():
    session = SimSession(mode=ControlMode.position(),
                         estimate_source="truth")
    near = CommandBundle(x_ee=vec3(0.45, 0.0, 0.0))
    far = CommandBundle(x_ee=vec3(0.55, 0.1, 0.05))

    logs = session.run(200, lambda t: near if t < 2.0 - 1e-9 else far)
    stats = tracking_windows(logs, session.params.dt,
                             window_s=1.0, settle_s=0.5)
    # 4 s of data -> 4 one-second windows; the first is initial settling
    # and the third contains the setpoint change at t=2.
    assert len(stats) == 2
    assert stats[0].t_start == pytest.approx(1.0)
    assert stats[1].t_start == pytest.approx(3.0)
    for w in stats:
        assert w.rms_error < 1e-3
        assert w.max_error < 2e-3


def test_tracking_windows_target_reference():
    session = SimSession(mode=ControlMode.position(),
                         estimate_source="truth")
    cmd = CommandBundle(x_ee=vec3(0.5, 0, 0))
    logs = session.run(100, lambda t: cmd)
    stats = tracking_windows(logs, session.params.dt, reference="x_target")
    assert stats and all(w.rms_error < 1e-3 for w in stats)
