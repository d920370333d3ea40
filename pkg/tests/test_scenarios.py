"""Shortened runs of the scripted evaluation protocols.

The full-length criterion runs live in the acceptance suite; these keep
each protocol honest at a fraction of the wall time.
"""

import numpy as np
import pytest

from forcesim.scenarios import (SCENARIOS, base_halt_demo, base_kick_demo,
                                force_sweep, force_tracking_demo,
                                hybrid_demo, impedance_demo,
                                matched_force_tracking, payload_demo,
                                position_tracking)


def test_position_tracking_windows_settle():
    logs, m = position_tracking(steps=1500, seed=3)
    assert len(logs) == 1500
    assert m["windows"] >= 10
    assert m["frac_windows_under_1cm"] == 1.0
    # Steady-state error in free space is pure float noise.
    assert m["worst_window_m"] < 1e-6


def test_matched_forces_collapse_to_position_tracking():
    _, m = matched_force_tracking(steps=1500, seed=3)
    assert m["frac_windows_under_2cm"] == 1.0
    assert m["worst_window_m"] < 0.015


def test_force_sweep_levels_and_zero():
    _, m = force_sweep(levels=(0, 30), hold_s=5.0)
    by_level = {r["level"]: r for r in m["rows"]}
    assert by_level[0.0]["pct_error"] is None
    assert m["zero_level_achieved"] < 0.05
    assert abs(by_level[30.0]["achieved"] - 30.0) / 30.0 < 0.05
    assert m["worst_pct_error"] < 5.0
    # Oracle feedback drove the loop; its per-level error is numerical.
    assert max(max(r["est_rms"]) for r in m["rows"]) < 1e-9


def test_impedance_displacement_matches_f_over_k():
    _, m = impedance_demo()
    assert m["worst_pct_error"] <= 2.0
    disp = np.asarray(m["displacement_m"])
    expected = np.asarray(m["expected_m"])
    assert np.all(np.sign(disp) == np.sign(expected))


def test_force_tracking_moves_then_holds():
    _, m = force_tracking_demo(settle_s=3.0)
    # A sub-newton nudge must still drag the setpoint a visible distance,
    # and releasing must not let it spring back.
    assert m["displacement_at_release_m"] > 0.1
    assert m["drift_after_release_m"] < 0.01


def test_payload_supported_by_commanded_force():
    _, m = payload_demo(mass=2.5, f_cmd_z=25.0)
    assert m["abs_z_error_m"] < 0.02
    # The estimate the loop ran on must expose the payload weight.
    assert m["f_hat_tail"][2] == pytest.approx(-2.5 * 9.81, abs=1.0)


def test_hybrid_tracks_tangent_while_pressing():
    _, m = hybrid_demo()
    assert m["max_tangential_error_m"] < 0.02
    assert m["worst_normal_pct"] <= 5.0
    assert m["mean_normal_force_n"] == pytest.approx(30.0, rel=0.05)


def test_base_halts_against_matched_drag():
    _, m = base_halt_demo(v_cmd=0.5)
    assert m["tail_speed"] < 0.05
    assert m["opposing_force_n"] == -0.5 * 75.0


def test_base_yields_at_force_over_d():
    _, m = base_kick_demo(force=30.0)
    assert m["expected_speed"] == pytest.approx(30.0 / 75.0)
    assert m["pct_error"] <= 10.0


def test_scenario_registry_contract():
    assert set(SCENARIOS) == {"position", "force", "impedance",
                              "force-tracking", "hybrid", "payload",
                              "halt", "kick", "matched"}
    logs, metrics = SCENARIOS["kick"]()
    assert isinstance(metrics, dict) and logs
