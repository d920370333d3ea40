"""Seeded rollout synthesis for estimator training.

Generates excitation episodes with the scheduler streams (resampled
command bundles, trapezoid disturbance cycles on both bodies) over plants
whose motor strength, contact friction, and gripper payload are drawn per
episode. Those three are the parameters an estimator can actually pin
down from a short observation window; base-side randomizations (added
body mass, center-of-mass shifts, velocity kicks) matter for policy
robustness but are unidentifiable here, so they stay out of the
estimation training distribution.

Episodes are written in the standard episode-file format; the training
matrices (observation vectors and ground-truth labels) are rebuilt from
the frames deterministically, so a directory of episode files *is* the
dataset.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .control import CommandBundle, ControlMode
from .episodes import EpisodeRecord, read_episode, write_episode
from .estimator import EstimatorDataset, EstimatorOutput, make_observation
from .plant import (EnvironmentModel, FreeSpace, PlantParams, PlantState,
                    Wall, as_vec3, initial_state, target_to_action)
from .rollout import SimSession
from .scheduler import CommandStream, DisturbanceStream

TASK_NAME = "estimator-data"


class SlewedCommandStream:
    """Command stream whose position setpoint ramps instead of jumping.

    Raw resampled targets can sit on the far side of a wall; letting the
    setpoint jump there sends the arm through free space at several m/s
    and the resulting impact spikes dominate the force labels. Slewing
    the position command (forces and base velocities still switch
    instantly; they are bounded effects) keeps contact onset speeds in a
    realistic band. The default rate sits below the plant's saturated
    top speed (~1 m/s at the stock gains), so the arm actually tracks
    the setpoint and first-contact transients stay small enough for a
    history-only regressor to have a chance: the force at a given tick
    only shows up in the velocity one tick later, so the first tick of
    any impact is unpredictable and its magnitude sets an error floor.
    Call ``value`` once per tick in time order.
    """

    def __init__(self, seed: int, interval: float = 2.0,
                 rate: float = 0.5, dt: float = 0.02, start=None):
        self._inner = CommandStream(seed=seed, interval=interval)
        self._rate = float(rate)
        self._dt = float(dt)
        # Default: adopt the first sampled target as-is; pass ``start``
        # (usually the plant's home position) to slew from tick one.
        self._x = None if start is None else np.asarray(
            start, dtype=np.float64).copy()

    def value(self, t: float) -> CommandBundle:
        cmd = self._inner.value(t).copy()
        if self._x is None:
            self._x = cmd.x_ee.copy()
        else:
            delta = cmd.x_ee - self._x
            dist = float(np.linalg.norm(delta))
            step_len = self._rate * self._dt
            if dist > step_len:
                self._x = self._x + delta * (step_len / dist)
            else:
                self._x = cmd.x_ee.copy()
        cmd.x_ee = self._x.copy()
        return cmd


@dataclass
class SynthesisConfig:
    episodes: int = 240
    ticks: int = 400                 # 8 s at the default dt
    seed: int = 0
    wall_fraction: float = 0.5       # remainder runs in free space
    force_range: float = 60.0        # disturbance cycle amplitude, N
    command_interval: float = 2.0    # s between command resamples
    command_rate: float = 0.5        # m/s position-command slew limit
    strength_range: Tuple[float, float] = (0.85, 1.15)
    friction_range: Tuple[float, float] = (0.3, 2.0)
    payload_range: Tuple[float, float] = (0.0, 0.5)

    def __post_init__(self):
        if self.episodes <= 0 or self.ticks <= 1:
            raise ValueError("need at least one episode of several ticks")
        if not 0.0 <= self.wall_fraction <= 1.0:
            raise ValueError("wall_fraction must be in [0, 1]")


def _episode_seed(base: int, index: int) -> int:
    # Spread per-episode seeds so different base seeds never collide for
    # any realistic episode count.
    return base * 1_000_003 + index


def synth_plant(rng: np.random.Generator,
                cfg: SynthesisConfig) -> PlantParams:
    return PlantParams(
        motor_strength=float(rng.uniform(*cfg.strength_range)),
        friction=float(rng.uniform(*cfg.friction_range)),
        payload=float(rng.uniform(*cfg.payload_range)))


def synth_env(rng: np.random.Generator,
              cfg: SynthesisConfig) -> EnvironmentModel:
    """A random plane facing back toward the workspace, or free space."""
    if rng.random() >= cfg.wall_fraction:
        return FreeSpace()
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    d = float(rng.uniform(0.45, 0.75))
    return Wall(point=u * d, normal=-u)


def synth_episode(seed: int, cfg: SynthesisConfig) -> EpisodeRecord:
    """One excitation episode under a freshly drawn plant."""
    rng = np.random.default_rng(seed)
    params = synth_plant(rng, cfg)
    env = synth_env(rng, cfg)
    env_start = env.to_spec()
    session = SimSession(params=params, env=env,
                         mode=ControlMode.force_control(),
                         estimate_source="truth")
    cmds = SlewedCommandStream(seed=seed + 1, interval=cfg.command_interval,
                               rate=cfg.command_rate, dt=params.dt)
    dist_ee = DisturbanceStream(seed=seed + 2, lo=-cfg.force_range,
                                hi=cfg.force_range)
    dist_base = DisturbanceStream(seed=seed + 3, lo=-cfg.force_range,
                                  hi=cfg.force_range, planar=True)
    logs = session.run(cfg.ticks, cmds.value, f_ee_fn=dist_ee.value,
                       f_base_fn=dist_base.value)
    notes = {"purpose": "estimator-training",
             "randomized": {"motor_strength": params.motor_strength,
                            "friction": params.friction,
                            "payload": params.payload}}
    return EpisodeRecord.from_session(session, logs, task=TASK_NAME,
                                      seed=seed, env_start=env_start,
                                      notes=notes)


def episode_matrices(record: EpisodeRecord
                     ) -> Tuple[np.ndarray, np.ndarray]:
    """(obs, label) training matrices rebuilt from an episode's frames.

    The observation at tick k is a pure function of the pre-step state,
    the tick's command/disturbance inputs, and the previous action, all of
    which the frames carry; rebuilding gives bit-identical vectors to the
    ones the recording session saw.
    """
    params = PlantParams.from_json(record.header.plant)
    state = initial_state(params)
    a_prev = target_to_action(params.q_default, params)
    rows, labels = [], []
    for frame in record.frames:
        cmd = CommandBundle.from_json(frame.cmd)
        obs = make_observation(state, cmd, a_prev,
                               as_vec3(frame.f_base_ext), params)
        rows.append(obs.to_vector())
        labels.append(EstimatorOutput.from_json(frame.est_truth).as_vector())
        state = PlantState.from_json(frame.state)
        a_prev = as_vec3(frame.action)
    obs_mat = np.vstack(rows)
    label_mat = np.vstack(labels)
    return obs_mat, label_mat


def build_dataset(cfg: SynthesisConfig,
                  out_dir: Optional[str] = None,
                  keep_records: bool = False):
    """Synthesize every episode (optionally writing the files) and stack
    them into an EstimatorDataset. Returns (dataset, paths, records)."""
    matrices, paths, records = [], [], []
    for i in range(cfg.episodes):
        record = synth_episode(_episode_seed(cfg.seed, i), cfg)
        obs_mat, label_mat = episode_matrices(record)
        matrices.append((obs_mat, label_mat, record.header.plant))
        if out_dir is not None:
            paths.append(write_episode(record, out_dir))
        if keep_records:
            records.append(record)
    return EstimatorDataset(matrices), paths, records


def dataset_from_files(paths: List[str]) -> EstimatorDataset:
    """Load a dataset back from episode files (any task name works as
    long as the frames carry truth labels)."""
    entries = []
    for p in sorted(paths):
        record = read_episode(p)
        obs_mat, label_mat = episode_matrices(record)
        entries.append((obs_mat, label_mat, record.header.plant))
    return EstimatorDataset(entries)


def dataset_from_dir(path: str) -> EstimatorDataset:
    files = [os.path.join(path, f) for f in os.listdir(path)
             if f.endswith(".episode.jsonl")]
    if not files:
        raise FileNotFoundError(f"no episode files under {path}")
    return dataset_from_files(files)
