"""Unified force-position law: formula checks, mode dispatch, hybrid
projection properties, force-tracking accumulation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forcesim.control import (
    CommandBundle, ControlMode, ImpedanceParams, ModeCommandMismatch,
    ModeKind, UnifiedController, compute_base_target, compute_ee_target,
    force_tracking_update, resolve,
)
from forcesim.plant import vec3

unit = st.floats(-60.0, 60.0, allow_nan=False)


def test_ee_target_formula():
    x = compute_ee_target(vec3(0.5, 0, 0.2), vec3(10, 0, 0),
                          vec3(-4, 2, 0), K=100.0)
    assert np.allclose(x, [0.5 + 6 / 100, 0.02, 0.2])


def test_zero_forces_reduce_to_position_tracking():
    x_cmd = vec3(0.4, -0.1, 0.3)
    assert np.allclose(compute_ee_target(x_cmd, vec3(), vec3(), 100.0),
                       x_cmd)


def test_base_target_compensates_xy_only():
    v = compute_base_target(vec3(0.5, 0.2, 0.3), vec3(15, 0, 0),
                            vec3(-37.5, 7.5, 99.0), D=75.0)
    assert v[0] == pytest.approx(0.5 + (15 - 37.5) / 75.0)
    assert v[1] == pytest.approx(0.2 + 7.5 / 75.0)
    # wz passes through no matter what the force says.
    assert v[2] == pytest.approx(0.3)


def test_halt_composition():
    # Walking command plus an exactly opposing drag force: target velocity
    # collapses to zero, i.e. the robot stops pushing against the world.
    D = 75.0
    v = compute_base_target(vec3(0.5, 0, 0), vec3(), vec3(-0.5 * D, 0, 0), D)
    assert np.allclose(v, 0.0)


def test_force_tracking_accumulation_sequence():
    # Hand-computed: K=100, constant 10 N along x, three ticks.
    K = 100.0
    acc = vec3(0.5, 0, 0)
    for expected_x in (0.6, 0.7, 0.8):
        acc = force_tracking_update(acc, vec3(10.0, 0, 0), K)
        assert acc[0] * 10 == pytest.approx(expected_x * 10)
    # After the force disappears the setpoint stays put.
    acc2 = force_tracking_update(acc, vec3(), K)
    assert np.array_equal(acc2, acc)


def test_resolve_position_and_impedance_ignore_force_commands():
    params = ImpedanceParams()
    cmd = CommandBundle(x_ee=vec3(0.5, 0, 0), f_ee=vec3(50, 0, 0),
                        v_base=vec3(0.2, 0, 0), f_base=vec3(30, 0, 0))
    f_net = vec3(10, 0, 0)
    for mode in (ControlMode.position(), ControlMode.impedance()):
        x_t, v_t, ft = resolve(mode, cmd, f_net, vec3(), params, None)
        assert np.allclose(x_t, [0.5 + 0.1, 0, 0])  # net force only
        assert np.allclose(v_t, [0.2, 0, 0])
        assert ft is None


def test_resolve_force_control_applies_commanded_forces():
    params = ImpedanceParams()
    cmd = CommandBundle(x_ee=vec3(0.6, 0, 0), f_ee=vec3(20, 0, 0))
    x_t, _, _ = resolve(ControlMode.force_control(), cmd, vec3(-19, 0, 0),
                        vec3(), params, None)
    assert np.allclose(x_t, [0.6 + 0.01, 0, 0])


def test_resolve_force_tracking_seeds_and_walks():
    params = ImpedanceParams()
    cmd = CommandBundle(x_ee=vec3(0.5, 0, 0))
    f = vec3(10, 0, 0)
    x_t, _, acc = resolve(ControlMode.force_tracking(), cmd, f, vec3(),
                          params, None)
    # Seeded from x_cmd and walked once; the accumulator IS the target,
    # so the EE freezes in place the moment the force vanishes.
    assert acc[0] == pytest.approx(0.6)
    assert x_t[0] == pytest.approx(0.6)
    x_t2, _, acc2 = resolve(ControlMode.force_tracking(), cmd, f, vec3(),
                            params, acc)
    assert acc2[0] == pytest.approx(0.7)
    assert x_t2[0] == pytest.approx(0.7)
    x_t3, _, acc3 = resolve(ControlMode.force_tracking(), cmd, vec3(),
                            vec3(), params, acc2)
    assert x_t3[0] == pytest.approx(0.7)
    assert acc3[0] == pytest.approx(0.7)


def test_hybrid_rejects_tangent_force():
    params = ImpedanceParams()
    mode = ControlMode.hybrid(vec3(0, 1, 0))
    cmd = CommandBundle(x_ee=vec3(0.5, 0, 0), f_ee=vec3(0, 0.1, 0))
    with pytest.raises(ModeCommandMismatch):
        resolve(mode, cmd, vec3(), vec3(), params, None)


@settings(max_examples=100, deadline=None)
@given(fx=unit, fy=unit, fz=unit, cx=unit, cy=unit, cz=unit)
def test_hybrid_keeps_position_axis_clean(fx, fy, fz, cx, cy, cz):
    # Along the tangent the target equals the raw position command;
    # orthogonally it follows the force law.
    params = ImpedanceParams()
    tangent = vec3(0, 0, 1.0)
    f_cmd = vec3(cx, cy, 0.0)  # orthogonal by construction
    cmd = CommandBundle(x_ee=vec3(0.4, 0.1, 0.3), f_ee=f_cmd)
    f_net = vec3(fx, fy, fz)
    x_t, _, _ = resolve(ControlMode.hybrid(tangent), cmd, f_net, vec3(),
                        params, None)
    assert x_t[2] == pytest.approx(0.3, abs=1e-12)
    assert x_t[0] == pytest.approx(0.4 + (fx + cx) / params.K)
    assert x_t[1] == pytest.approx(0.1 + (fy + cy) / params.K)


def test_mode_validation():
    with pytest.raises(ValueError):
        ControlMode.hybrid(vec3(0, 2, 0))  # not unit
    with pytest.raises(ValueError):
        ControlMode(ModeKind.POSITION, vec3(1, 0, 0))  # stray tangent
    with pytest.raises(ValueError):
        ControlMode(ModeKind.HYBRID)  # missing tangent


def test_mode_json_round_trip():
    modes = [ControlMode.position(), ControlMode.force_control(),
             ControlMode.impedance(), ControlMode.force_tracking(),
             ControlMode.hybrid(vec3(1, 0, 0))]
    for m in modes:
        assert ControlMode.from_json(m.to_json()) == m


def test_command_bundle_vector_round_trip():
    cmd = CommandBundle(v_base=vec3(1, 2, 3), x_ee=vec3(4, 5, 6),
                        f_ee=vec3(7, 8, 9), f_base=vec3(10, 11, 12))
    v = cmd.as_vector()
    assert np.array_equal(v, np.arange(1.0, 13.0))
    clone = CommandBundle.from_vector(v)
    assert np.array_equal(clone.f_base, cmd.f_base)
    assert CommandBundle.from_json(cmd.to_json()).to_json() == cmd.to_json()


def test_controller_resets_accumulator_on_mode_change():
    ctl = UnifiedController(ControlMode.force_tracking())
    cmd = CommandBundle(x_ee=vec3(0.5, 0, 0))
    ctl.resolve(cmd, vec3(10, 0, 0), vec3())
    ctl.resolve(cmd, vec3(10, 0, 0), vec3())
    assert ctl._ft_cmd[0] == pytest.approx(0.7)
    ctl.set_mode(ControlMode.position())
    ctl.set_mode(ControlMode.force_tracking())
    x_t, _ = ctl.resolve(cmd, vec3(), vec3())
    assert ctl._ft_cmd[0] == pytest.approx(0.5)  # re-seeded from x_cmd


def test_impedance_params_validation():
    with pytest.raises(ValueError):
        ImpedanceParams(K=0.0)
    with pytest.raises(ValueError):
        ImpedanceParams(D=-1.0)
