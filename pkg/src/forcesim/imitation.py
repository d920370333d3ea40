"""Behavior cloning on contact tasks, with and without the force channel.

The experiment this module exists for: scripted experts solve three
contact tasks in force-control mode, their episodes are cloned twice
(once with force features and force-command targets, once position-only),
and both clones are rolled out on fresh scenes. The position-only clone
reproduces the expert's positions faithfully but has no way to press,
because near a surface the whole-body controller trades position error
for force at the impedance stiffness; recovering a 25 N press would take
a commanded setpoint a quarter meter inside the wall, which the expert's
trajectories never show. The force-aware clone just predicts the force
command. Success-rate deltas quantify that.

Feature convention (one row per tick, assembled into windows of 4):
``[x_ee(3), v_ee(3), scene(6), f_hat(3)]`` where everything is what a
policy could know *before* the tick runs: the pre-step state, the scene
plane as currently believed (occluded tasks freeze it at first contact),
and the previous tick's force estimate. Targets are the commands the
expert issued at that tick.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .control import CommandBundle, ControlMode
from .episodes import EpisodeRecord, read_episode, write_episode
from .estimator import TrainingDiverged
from .mlp import (Adam, MLP, Normalizer, NormalizedMLP, SGDMomentum,
                  mse_loss_and_grads)
from .plant import (PlantParams, PlantState, SpringLatch, Vec3, Wall,
                    Workspace, as_vec3, initial_state, vec3)
from .rollout import SimSession, TickLog

WINDOW = 4
SCENE_DIM = 6
FEAT_PER_TICK = 15          # x_ee, v_ee, scene, f_hat
IN_DIM = WINDOW * FEAT_PER_TICK
CONTACT_EPS = 5.0           # N, contact reporting threshold
FORCE_CMD_LIMIT = 60.0      # N, per axis clamp on policy force commands

# Real-robot reference success rates for the tasks these mirror
# (force-aware vs position-only); context only, desk-scale numbers are
# not directly comparable.
REFERENCE_RATES = {
    "wipe": (0.58, 0.22),
    "open": (0.70, 0.36),
    "close": (0.72, 0.30),
    "occluded": (0.76, 0.30),
}


class SchemaMismatch(Exception):
    """Episodes fed to the dataset builder disagree on shape/metadata."""


class EmptyDataset(Exception):
    """No usable samples."""


# ---------------------------------------------------------------------------
# Tasks


@dataclass(frozen=True)
class TaskSpec:
    name: str
    kind: str                      # "wipe" or "latch"
    occluded: bool = False
    force_band: Tuple[float, float] = (10.0, 30.0)   # wipe, N
    lateral_span: float = 0.3                         # wipe, m
    coverage_target: float = 0.8                      # wipe
    band_fraction: float = 0.8                        # wipe
    trigger_force: float = 25.0                       # latch, N
    press_force: float = 20.0                         # wipe expert setpoint
    max_steps: int = 1000
    demo_ticks: int = 500

    def make_env(self, rng: np.random.Generator):
        """Random task scene: a plane roughly facing the robot."""
        yaw = rng.uniform(-0.25, 0.25)
        pitch = rng.uniform(-0.15, 0.15)
        normal = -vec3(np.cos(pitch) * np.cos(yaw),
                       np.cos(pitch) * np.sin(yaw),
                       np.sin(pitch))
        normal = normal / np.linalg.norm(normal)
        d = float(rng.uniform(0.5, 0.62))
        point = -normal * d
        if self.kind == "latch":
            return SpringLatch(point=point, normal=normal,
                               trigger_force=self.trigger_force)
        return Wall(point=point, normal=normal)


def wipe_wall() -> TaskSpec:
    return TaskSpec(name="wipe-wall", kind="wipe", demo_ticks=500)


def push_latch() -> TaskSpec:
    return TaskSpec(name="push-latch", kind="latch", demo_ticks=350)


def push_latch_occluded() -> TaskSpec:
    return TaskSpec(name="push-latch-occluded", kind="latch", occluded=True,
                    demo_ticks=350)


TASKS = {t.name: t for t in (wipe_wall(), push_latch(),
                             push_latch_occluded())}


def scene_vector(env) -> np.ndarray:
    """Current surface plane as 6 features (point, normal)."""
    return np.concatenate([env.surface_point(), env.normal])


def tangent_of(env) -> Vec3:
    """Unit sweep direction: global y projected into the plane."""
    n = env.normal
    t = vec3(0.0, 1.0, 0.0) - n[1] * n
    return t / np.linalg.norm(t)


class SceneTracker:
    """Scene features per tick, with the occlusion freeze.

    Occluded tasks lose sight of the mechanism once the arm makes
    contact: the features stop updating at the first tick whose previous
    step reported a contact force.
    """

    def __init__(self, env, occluded: bool):
        self.env = env
        self.occluded = occluded
        self._frozen: Optional[np.ndarray] = None

    def current(self, prev_contact: float) -> np.ndarray:
        if self._frozen is not None:
            return self._frozen.copy()
        scene = scene_vector(self.env)
        if self.occluded and prev_contact > CONTACT_EPS:
            self._frozen = scene.copy()
        return scene


# ---------------------------------------------------------------------------
# Scripted experts


def _slew(current: Vec3, goal: Vec3, rate: float, dt: float) -> Vec3:
    step = goal - current
    dist = float(np.linalg.norm(step))
    if dist <= rate * dt:
        return goal.copy()
    return current + step * (rate * dt / dist)


class WipeWallExpert:
    """Approach, press at the task force, sweep laterally.

    Phases: slew to a standoff point, creep onto the surface while
    ramping the press force (commanded along -normal, i.e. into the
    wall), then sweep a sinusoid along the tangent at constant press.
    """

    STANDOFF = 0.04
    APPROACH_RATE = 0.5     # m/s
    ENGAGE_RATE = 0.1
    RAMP_RATE = 20.0        # N/s

    def __init__(self, task: TaskSpec, env,
                 dt: float = PlantParams().dt):
        self.task = task
        self.dt = dt
        self.anchor = env.surface_point().copy()
        self.normal = env.normal.copy()
        self.tangent = tangent_of(env)
        self.sweep_period = 4.0
        self.mode = ControlMode.force_control()
        self._cmd: Optional[Vec3] = None
        self._press = 0.0
        self._phase = "approach"
        self._sweep_t0 = 0.0

    def __call__(self, t: float, state: PlantState,
                 f_hat: Vec3, scene: np.ndarray) -> CommandBundle:
        if self._cmd is None:
            self._cmd = state.x_ee.copy()
        standoff = self.anchor + self.STANDOFF * self.normal
        if self._phase == "approach":
            goal, rate = standoff, self.APPROACH_RATE
            if float(np.linalg.norm(self._cmd - standoff)) <= 1e-9:
                self._phase = "engage"
        if self._phase == "engage":
            goal, rate = self.anchor, self.ENGAGE_RATE
            # Ramp the press only once the setpoint reaches the surface,
            # otherwise the compensation winds up and slams the contact.
            if float(np.linalg.norm(self._cmd - self.anchor)) <= 1e-9:
                self._press = min(self.task.press_force,
                                  self._press + self.RAMP_RATE * self.dt)
                if self._press >= self.task.press_force:
                    self._phase = "sweep"
                    self._sweep_t0 = t
        if self._phase == "sweep":
            phase = 2.0 * np.pi * (t - self._sweep_t0) / self.sweep_period
            amp = 0.5 * self.task.lateral_span
            goal = self.anchor + amp * np.sin(phase) * self.tangent
            rate = self.APPROACH_RATE
        self._cmd = _slew(self._cmd, goal, rate, self.dt)
        return CommandBundle(x_ee=self._cmd.copy(),
                             f_ee=-self.normal * self._press)


class PushLatchExpert:
    """Ramp a press until the estimated reaction passes the trigger,
    then withdraw and stay clear so the mechanism can spring open."""

    STANDOFF = 0.04
    RETREAT = 0.12
    APPROACH_RATE = 0.5
    ENGAGE_RATE = 0.1
    RAMP_RATE = 25.0

    def __init__(self, task: TaskSpec, env,
                 dt: float = PlantParams().dt):
        self.task = task
        self.dt = dt
        self.anchor = env.surface_point().copy()
        self.normal = env.normal.copy()
        self.mode = ControlMode.force_control()
        self._cmd: Optional[Vec3] = None
        self._press = 0.0
        self._phase = "approach"

    def __call__(self, t: float, state: PlantState,
                 f_hat: Vec3, scene: np.ndarray) -> CommandBundle:
        if self._cmd is None:
            self._cmd = state.x_ee.copy()
        reaction = float(np.dot(f_hat, self.normal))
        if self._phase != "retreat" and reaction >= self.task.trigger_force:
            self._phase = "retreat"
        if self._phase == "retreat":
            goal = self.anchor + self.RETREAT * self.normal
            self._cmd = _slew(self._cmd, goal, self.APPROACH_RATE, self.dt)
            return CommandBundle(x_ee=self._cmd.copy())
        standoff = self.anchor + self.STANDOFF * self.normal
        if self._phase == "approach":
            goal, rate = standoff, self.APPROACH_RATE
            if float(np.linalg.norm(self._cmd - standoff)) <= 1e-9:
                self._phase = "press"
        if self._phase == "press":
            goal, rate = self.anchor, self.ENGAGE_RATE
            if float(np.linalg.norm(self._cmd - self.anchor)) <= 1e-9:
                self._press = min(self.task.trigger_force + 10.0,
                                  self._press + self.RAMP_RATE * self.dt)
        self._cmd = _slew(self._cmd, goal, rate, self.dt)
        return CommandBundle(x_ee=self._cmd.copy(),
                             f_ee=-self.normal * self._press)


def make_expert(task: TaskSpec, env):
    if task.kind == "wipe":
        return WipeWallExpert(task, env)
    return PushLatchExpert(task, env)


# ---------------------------------------------------------------------------
# Episode runner shared by experts and learned policies


def run_episode(task: TaskSpec, make_driver, mode: ControlMode, seed: int,
                n_ticks: int, estimate_source: str = "oracle",
                params: Optional[PlantParams] = None
                ) -> Tuple[List[TickLog], SimSession, dict]:
    """Run one task episode on a scene seeded by ``seed``.

    ``make_driver(env)`` builds the per-episode controller callable,
    ``driver(t, state, f_hat, scene) -> CommandBundle``; ``f_hat`` is the
    previous tick's EE force estimate (zero at the start), matching what
    a learned policy can actually condition on. Returns the tick logs,
    the finished session, and the environment spec from before the
    first tick (stateful scenes mutate).
    """
    rng = np.random.default_rng(seed)
    env = task.make_env(rng)
    env_start = env.to_spec()
    driver = make_driver(env)
    session = SimSession(params=params, env=env, mode=mode,
                         estimate_source=estimate_source)
    tracker = SceneTracker(env, task.occluded)
    f_hat = vec3()
    prev_contact = 0.0
    logs: List[TickLog] = []
    for _ in range(n_ticks):
        scene = tracker.current(prev_contact)
        cmd = driver(session.state.t, session.state, f_hat, scene)
        log = session.tick(cmd, scene=scene.tolist())
        logs.append(log)
        f_hat = log.est.f_ee.copy()
        prev_contact = float(np.linalg.norm(log.state.f_contact))
    return logs, session, env_start


# ---------------------------------------------------------------------------
# Success predicates


def evaluate_wipe(logs: List[TickLog], task: TaskSpec, env) -> dict:
    n = env.normal
    tangent = tangent_of(env)
    p = env.surface_point()
    lo, hi = task.force_band
    contact, in_band, coords = 0, 0, []
    peak = 0.0
    for log in logs:
        f = log.state.f_contact
        mag = float(np.linalg.norm(f))
        peak = max(peak, mag)
        if mag <= CONTACT_EPS:
            continue
        contact += 1
        fn = float(np.dot(f, n))
        if lo <= fn <= hi:
            in_band += 1
            coords.append(float(np.dot(log.state.x_ee - p, tangent)))
    band_frac = in_band / contact if contact else 0.0
    coverage = ((max(coords) - min(coords)) / task.lateral_span
                if len(coords) >= 2 else 0.0)
    success = (contact > 0 and band_frac >= task.band_fraction
               and coverage >= task.coverage_target)
    return {"success": bool(success), "contact_ticks": contact,
            "band_fraction": band_frac, "coverage": coverage,
            "peak_force": peak}


def evaluate_latch(logs: List[TickLog], task: TaskSpec, env) -> dict:
    n = env.normal
    p = env.point          # nominal plane, not the sprung surface
    trigger_tick = None
    withdrawn_tick = None
    peak = 0.0
    for i, log in enumerate(logs):
        fn = float(np.dot(log.state.f_contact, n))
        peak = max(peak, fn)
        if trigger_tick is None and fn >= task.trigger_force:
            trigger_tick = i
        if (trigger_tick is not None and withdrawn_tick is None
                and i > trigger_tick
                and float(np.dot(log.state.x_ee - p, n)) >= 0.005):
            withdrawn_tick = i
    tail = logs[-25:]
    quiet = all(float(np.linalg.norm(l.state.f_contact)) < 1.0
                for l in tail)
    success = (trigger_tick is not None and withdrawn_tick is not None
               and quiet)
    return {"success": bool(success), "peak_force": peak,
            "triggered": trigger_tick is not None,
            "released": withdrawn_tick is not None, "quiet_tail": quiet}


def evaluate_task(logs: List[TickLog], task: TaskSpec, env) -> dict:
    if task.kind == "wipe":
        return evaluate_wipe(logs, task, env)
    return evaluate_latch(logs, task, env)


# ---------------------------------------------------------------------------
# Demonstrations


def record_demos(task: TaskSpec, n_episodes: int, seed: int = 0,
                 out_dir: Optional[str] = None,
                 estimate_source: str = "oracle"
                 ) -> Tuple[List[EpisodeRecord], List[str], dict]:
    """Scripted-expert episodes; failed attempts are dropped (and counted).

    Returns (records, paths, stats).
    """
    records, paths = [], []
    attempts = fails = 0
    ep_seed = seed
    while len(records) < n_episodes and attempts < 2 * n_episodes:
        attempts += 1
        logs, session, env_start = run_episode(
            task, lambda env: make_expert(task, env),
            ControlMode.force_control(), ep_seed, task.demo_ticks,
            estimate_source=estimate_source)
        ep_seed += 1
        result = evaluate_task(logs, task, session.env)
        if not result["success"]:
            fails += 1
            continue
        record = EpisodeRecord.from_session(
            session, logs, task=task.name, seed=ep_seed - 1,
            env_start=env_start, notes={"expert": True, "metrics": result})
        records.append(record)
        if out_dir is not None:
            paths.append(write_episode(record, out_dir))
    stats = {"attempts": attempts, "failed": fails, "kept": len(records)}
    if len(records) < n_episodes:
        raise RuntimeError(
            f"expert failed too often on {task.name}: {stats}")
    return records, paths, stats


# ---------------------------------------------------------------------------
# Dataset


def episode_feature_rows(record: EpisodeRecord,
                         include_force: bool
                         ) -> Tuple[np.ndarray, np.ndarray]:
    """Per-tick feature rows and expert-command targets for one episode."""
    params = PlantParams.from_json(record.header.plant)
    n = len(record.frames)
    feats = np.zeros((n, FEAT_PER_TICK))
    targets = np.zeros((n, 6))
    x_prev = initial_state(params).x_ee
    v_prev = vec3()
    f_hat_prev = vec3()
    for k, frame in enumerate(record.frames):
        if frame.scene is None or len(frame.scene) != SCENE_DIM:
            raise SchemaMismatch(
                f"frame {k} lacks {SCENE_DIM}-dim scene features")
        feats[k, 0:3] = x_prev
        feats[k, 3:6] = v_prev
        feats[k, 6:12] = frame.scene
        feats[k, 12:15] = f_hat_prev if include_force else 0.0
        targets[k, 0:3] = frame.cmd["x_ee"]
        targets[k, 3:6] = frame.cmd["f_ee"]
        state = PlantState.from_json(frame.state)
        x_prev, v_prev = state.x_ee, state.v_ee
        f_hat_prev = as_vec3(frame.est["f_ee"])
    return feats, targets


def _window_stack(feats: np.ndarray, targets: np.ndarray
                  ) -> Tuple[np.ndarray, np.ndarray]:
    n = feats.shape[0]
    if n < WINDOW:
        return (np.zeros((0, IN_DIM)), np.zeros((0, targets.shape[1])))
    X = np.stack([feats[k - WINDOW + 1:k + 1].reshape(-1)
                  for k in range(WINDOW - 1, n)])
    Y = targets[WINDOW - 1:]
    return X, Y


@dataclass
class BCDataset:
    X_train: np.ndarray
    Y_train: np.ndarray
    X_val: np.ndarray
    Y_val: np.ndarray
    in_norm: Normalizer
    out_norm: Normalizer
    include_force: bool

    def __len__(self):
        return self.X_train.shape[0]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.X_train, self.Y_train, self.X_val, self.Y_val):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(b"force" if self.include_force else b"position")
        return h.hexdigest()[:16]


def build_bc_dataset(records: Sequence[EpisodeRecord], include_force: bool,
                     val_fraction: float = 0.2, seed: int = 0) -> BCDataset:
    """Windowed samples, split by episode, normalization from train only.

    Position-only datasets (include_force=False) zero the force-estimate
    columns and keep only the position half of the targets, so zeroing a
    force-aware dataset's force columns reproduces them exactly.
    """
    if not records:
        raise EmptyDataset("no episodes given")
    dts = {r.header.dt for r in records}
    if len(dts) != 1:
        raise SchemaMismatch(f"mixed dt across episodes: {sorted(dts)}")
    per_ep = []
    for r in records:
        X, Y = _window_stack(*episode_feature_rows(r, include_force))
        if X.shape[0]:
            per_ep.append((X, Y))
    if not per_ep:
        raise EmptyDataset("episodes too short for a window")
    order = np.random.default_rng(seed).permutation(len(per_ep))
    n_val = int(round(val_fraction * len(per_ep)))
    n_val = min(n_val, len(per_ep) - 1)
    val_idx = set(order[:n_val].tolist())
    tr = [per_ep[i] for i in range(len(per_ep)) if i not in val_idx]
    va = [per_ep[i] for i in range(len(per_ep)) if i in val_idx]
    X_train = np.vstack([x for x, _ in tr])
    Y_train = np.vstack([y for _, y in tr])
    X_val = (np.vstack([x for x, _ in va]) if va
             else np.zeros((0, IN_DIM)))
    Y_val = (np.vstack([y for _, y in va]) if va
             else np.zeros((0, Y_train.shape[1])))
    if not include_force:
        Y_train, Y_val = Y_train[:, :3], Y_val[:, :3]
    in_norm = Normalizer.from_data(X_train)
    out_norm = Normalizer.from_data(Y_train)
    return BCDataset(X_train, Y_train, X_val, Y_val, in_norm, out_norm,
                     include_force)


def load_demo_records(paths: Sequence[str]) -> List[EpisodeRecord]:
    return [read_episode(p) for p in sorted(paths)]


# ---------------------------------------------------------------------------
# Policy


class BCPolicy:
    """One-tick command regressor over the feature window."""

    def __init__(self, net: NormalizedMLP):
        self.net = net
        self.include_force = bool(net.meta.get("include_force", True))

    @staticmethod
    def fresh(dataset: BCDataset, hidden=(128, 128),
              seed: int = 0) -> "BCPolicy":
        out_dim = 6 if dataset.include_force else 3
        net = NormalizedMLP(
            MLP([IN_DIM, *hidden, out_dim], seed=seed),
            dataset.in_norm, dataset.out_norm,
            meta={"kind": "bc_policy",
                  "include_force": dataset.include_force,
                  "window": WINDOW})
        return BCPolicy(net)

    @property
    def mode(self) -> ControlMode:
        return (ControlMode.force_control() if self.include_force
                else ControlMode.position())

    def predict_command(self, rows: np.ndarray) -> CommandBundle:
        """rows: (WINDOW, FEAT_PER_TICK) most-recent-last."""
        y = self.net.predict(rows.reshape(-1))
        x_cmd = y[0:3].copy()
        r_max = Workspace().r_max
        norm = float(np.linalg.norm(x_cmd))
        if norm > r_max:
            x_cmd *= r_max / norm
        f_cmd = vec3()
        if self.include_force:
            f_cmd = np.clip(y[3:6], -FORCE_CMD_LIMIT, FORCE_CMD_LIMIT)
        return CommandBundle(x_ee=x_cmd, f_ee=f_cmd)

    def save(self, path) -> None:
        self.net.save(path)

    @staticmethod
    def load(path) -> "BCPolicy":
        net = NormalizedMLP.load(path)
        if net.meta.get("kind") != "bc_policy":
            raise ValueError(f"{path} is not a behavior-cloning policy")
        return BCPolicy(net)


def train_bc(dataset: BCDataset, steps: int = 20000, batch: int = 128,
             lr: float = 1e-3, lr_final: Optional[float] = None,
             momentum: float = 0.9, optimizer: str = "sgd", seed: int = 0,
             log_every: int = 500) -> Tuple[BCPolicy, dict]:
    """MSE regression over the cloned command targets.

    Same optimizer options as the estimator trainer: plain SGD + momentum
    by default, ``optimizer="adam"`` for the adaptive variant.
    """
    if dataset.X_train.shape[0] == 0:
        raise EmptyDataset("empty training split")
    policy = BCPolicy.fresh(dataset, seed=seed)
    rng = np.random.default_rng(seed + 1)
    if optimizer == "sgd":
        opt = SGDMomentum(policy.net.mlp, lr=lr, momentum=momentum)
    elif optimizer == "adam":
        opt = Adam(policy.net.mlp, lr=lr)
    else:
        raise ValueError(f"unknown optimizer {optimizer!r}")
    Xn = dataset.in_norm.transform(dataset.X_train)
    Yn = dataset.out_norm.transform(dataset.Y_train)
    n = Xn.shape[0]
    losses, warmup = [], []
    reference = None
    bad_streak = 0
    for step_i in range(steps):
        if lr_final is not None and steps > 1:
            opt.lr = lr + (lr_final - lr) * step_i / (steps - 1)
        idx = rng.integers(0, n, size=min(batch, n))
        loss, gw, gb = mse_loss_and_grads(policy.net.mlp, Xn[idx], Yn[idx])
        opt.step(gw, gb)
        if step_i < 20:
            warmup.append(loss)
        elif reference is None:
            reference = float(np.median(warmup))
        # NaN comparisons are False, so test finiteness explicitly or a
        # NaN loss would look healthy forever.
        if reference is not None and (
                not np.isfinite(loss) or loss > 10.0 * reference):
            bad_streak += 1
            if bad_streak >= 500:
                raise TrainingDiverged(
                    f"loss {loss:.3e} stuck above 10x initial"
                    f" {reference:.3e}")
        else:
            bad_streak = 0
        if step_i % log_every == 0 or step_i == steps - 1:
            losses.append(loss)
    report = {"steps": steps, "batch": batch, "lr": lr,
              "optimizer": optimizer, "final_loss": losses[-1],
              "loss_samples": losses}
    if dataset.X_val.shape[0]:
        pred = policy.net.predict(dataset.X_val)
        rms = np.sqrt(np.mean((pred - dataset.Y_val) ** 2, axis=0))
        report["val_rms"] = rms.tolist()
    return policy, report


# ---------------------------------------------------------------------------
# Rollout + ablation


def rollout(policy: BCPolicy, task: TaskSpec, seed: int,
            max_steps: Optional[int] = None,
            estimate_source: str = "oracle") -> dict:
    """Run the policy on a fresh scene; returns metrics incl. success."""
    n_ticks = max_steps if max_steps is not None else task.max_steps
    rows = []
    home = None

    def driver(t, state, f_hat, scene):
        nonlocal home
        if home is None:
            home = state.x_ee.copy()
        f_feat = f_hat if policy.include_force else vec3()
        rows.append(np.concatenate([state.x_ee, state.v_ee, scene, f_feat]))
        if len(rows) < WINDOW:
            return CommandBundle(x_ee=home.copy())
        window = np.stack(rows[-WINDOW:])
        return policy.predict_command(window)

    logs, session, _ = run_episode(task, lambda env: driver, policy.mode,
                                   seed, n_ticks,
                                   estimate_source=estimate_source)
    result = evaluate_task(logs, task, session.env)
    result["ticks"] = len(logs)
    return result


def zero_policy(include_force: bool = True) -> BCPolicy:
    """All-zero commands; the ablation's sanity floor."""
    dataset = BCDataset(
        X_train=np.zeros((1, IN_DIM)), Y_train=np.zeros(
            (1, 6 if include_force else 3)),
        X_val=np.zeros((0, IN_DIM)), Y_val=np.zeros(
            (0, 6 if include_force else 3)),
        in_norm=Normalizer(-np.ones(IN_DIM), np.ones(IN_DIM)),
        out_norm=Normalizer(
            -np.ones(6 if include_force else 3),
            np.ones(6 if include_force else 3)),
        include_force=include_force)
    policy = BCPolicy.fresh(dataset, hidden=(4,), seed=0)
    for w in policy.net.mlp.weights:
        w[:] = 0.0
    for b in policy.net.mlp.biases:
        b[:] = 0.0
    return policy


def success_rate(policy: BCPolicy, task: TaskSpec, n_trials: int,
                 seed0: int, estimate_source: str = "oracle") -> Tuple[float,
                                                                       list]:
    outcomes = [rollout(policy, task, seed=seed0 + i,
                        estimate_source=estimate_source)["success"]
                for i in range(n_trials)]
    return float(np.mean(outcomes)), outcomes


def ablation_report(tasks: Sequence[str] = ("wipe-wall", "push-latch",
                                            "push-latch-occluded"),
                    n_demos: Optional[dict] = None, n_trials: int = 50,
                    train_steps: int = 20000, seed: int = 0,
                    out_dir: Optional[str] = None,
                    estimate_source: str = "oracle",
                    optimizer: str = "sgd") -> dict:
    """Train force-aware and position-only clones per task and compare.

    Returns {"rows": [...], "csv": str, "summary": str}; files land in
    ``out_dir`` when given.
    """
    demo_defaults = {"wipe-wall": 50, "push-latch": 30,
                     "push-latch-occluded": 30}
    if n_demos:
        demo_defaults.update(n_demos)
    rows = []
    for name in tasks:
        task = TASKS[name]
        records, _, demo_stats = record_demos(
            task, demo_defaults[name], seed=seed * 1000 + 1,
            estimate_source=estimate_source)
        ds_force = build_bc_dataset(records, include_force=True, seed=seed)
        ds_pos = build_bc_dataset(records, include_force=False, seed=seed)
        pol_force, rep_f = train_bc(ds_force, steps=train_steps, seed=seed,
                                    optimizer=optimizer)
        pol_pos, rep_p = train_bc(ds_pos, steps=train_steps, seed=seed,
                                  optimizer=optimizer)
        eval_seed = 50_000 + seed * 1000
        rate_f, _ = success_rate(pol_force, task, n_trials, eval_seed,
                                 estimate_source)
        rate_p, _ = success_rate(pol_pos, task, n_trials, eval_seed,
                                 estimate_source)
        rows.append({"task": name, "n_demos": len(records),
                     "n_trials": n_trials,
                     "success_force": rate_f, "success_position": rate_p,
                     "delta": rate_f - rate_p,
                     "expert_attempts": demo_stats["attempts"],
                     "train_loss_force": rep_f["final_loss"],
                     "train_loss_position": rep_p["final_loss"]})
    csv_lines = ["task,n_demos,n_trials,success_force,success_position,"
                 "delta"]
    for r in rows:
        csv_lines.append(
            f"{r['task']},{r['n_demos']},{r['n_trials']},"
            f"{r['success_force']!r},{r['success_position']!r},"
            f"{r['delta']!r}")
    csv_text = "\n".join(csv_lines) + "\n"
    summary = ["force-aware vs position-only behavior cloning"]
    for r in rows:
        summary.append(
            f"  {r['task']:22s} force {r['success_force']:.2f}  "
            f"position {r['success_position']:.2f}  "
            f"delta {r['delta']:+.2f}")
    summary_text = "\n".join(summary) + "\n"
    out = {"rows": rows, "csv": csv_text, "summary": summary_text}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "ablation.csv"), "w") as fh:
            fh.write(csv_text)
        with open(os.path.join(out_dir, "ablation.txt"), "w") as fh:
            fh.write(summary_text)
    return out
