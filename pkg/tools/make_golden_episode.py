"""Regenerates tests/data/golden.episode.jsonl.

The golden episode pins replay determinism: it walks the EE into the
wall, presses at 20 N under force control, rides out a disturbance in
impedance mode, and wanders back out, so one file covers free flight,
contact, mode switches and external forces. Only rerun this if the
plant or controller contract changes on purpose; the replay acceptance
check diffs against whatever is committed.
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "src"))

from forcesim.control import CommandBundle, ControlMode
from forcesim.episodes import EpisodeRecord, write_episode
from forcesim.plant import Wall, vec3
from forcesim.rewards import compute_reward, reward_inputs_from_log
from forcesim.rollout import SimSession
from forcesim.scenarios import WALL_NORMAL, WALL_POINT, default_wall


def main() -> None:
    session = SimSession(env=default_wall(), mode=ControlMode.position())
    dt = session.params.dt
    home = session.params.q_default.copy()
    logs = []

    def run(seconds, cmd, f_ee=None, f_base=None):
        for _ in range(int(round(seconds / dt))):
            logs.append(session.tick(cmd, f_ee, f_base))

    # Free-space approach toward the wall, slewed by hand.
    cmd = CommandBundle(x_ee=home.copy())
    for _ in range(int(round(2.0 / dt))):
        delta = WALL_POINT - cmd.x_ee
        step = 0.4 * dt
        cmd = cmd.copy()
        if float(np.linalg.norm(delta)) > step:
            cmd.x_ee = cmd.x_ee + delta / np.linalg.norm(delta) * step
        else:
            cmd.x_ee = WALL_POINT.copy()
        logs.append(session.tick(cmd))

    # Press at 20 N.
    session.set_mode(ControlMode.force_control())
    cmd = cmd.copy()
    cmd.f_ee = -WALL_NORMAL * 20.0
    run(2.0, cmd)

    # Impedance with a sideways disturbance and a base push.
    session.set_mode(ControlMode.impedance())
    cmd = cmd.copy()
    cmd.f_ee = vec3()
    cmd.x_ee = home.copy()
    run(1.5, cmd, f_ee=vec3(0.0, 9.0, -4.0), f_base=vec3(15.0, 0.0, 0.0))
    run(1.0, cmd)

    rewards = [compute_reward(reward_inputs_from_log(l), session.params,
                              session.controller.params.K,
                              session.controller.params.D) for l in logs]
    record = EpisodeRecord.from_session(
        session, logs, task="golden", seed=20260815, rewards=rewards,
        env_start=default_wall().to_spec(),
        notes={"purpose": "replay determinism reference"})
    out_dir = os.path.join(os.path.dirname(__file__), os.pardir,
                           "tests", "data")
    path = write_episode(record, out_dir, filename="golden.episode.jsonl",
                         created="2026-08-15T00:00:00Z")
    print(f"{len(logs)} frames -> {path}")


if __name__ == "__main__":
    main()
