"""Closed-loop episode harness: plant + unified control + estimation.

Everything that runs episodes (scheduler excitation, scripted experts,
teleoperation, policy rollouts, replays) goes through :class:`SimSession`
so the tick order is defined exactly once:

1. build the observation from the pre-step state and push it to history;
2. produce the force/state estimate (oracle, learned model, ground truth,
   or zeros while history is short);
3. resolve the active control mode into plant targets;
4. quantize the EE target through the normalized action (so recorded
   actions reconstruct the applied target exactly);
5. step the plant, remembering the net environment force that acted over
   the step (the label the estimators are judged against).

The per-tick record (:class:`TickLog`) carries enough to train estimators,
clone behaviors, compute rewards, and write replayable episodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .control import (CommandBundle, ControlMode, ImpedanceParams,
                      UnifiedController, validate_command)
from .estimator import (EstimatorOutput, HistoryBuffer, Observation,
                        make_observation, oracle_estimate)
from .plant import (GRAVITY, EnvironmentModel, FreeSpace, PlantParams,
                    PlantState, Vec3, action_to_target, as_vec3,
                    initial_state, step, target_to_action, vec3)

ESTIMATE_SOURCES = ("oracle", "model", "truth", "zero")


@dataclass
class TickLog:
    """Everything about one control tick."""

    t: float                    # time of the observation (pre-step)
    obs: Observation
    cmd: CommandBundle
    mode: ControlMode
    est: EstimatorOutput        # estimate fed to the controller
    est_truth: EstimatorOutput  # ground-truth labels, same timing contract
    action: Vec3                # normalized action actually applied
    x_target: Vec3              # effective EE target (from the action)
    v_target: Vec3              # base velocity target
    state: PlantState           # state after the step
    f_ee_ext: Vec3              # disturbance applied over the step
    f_base_ext: Vec3
    scene: Optional[list] = None


class SimSession:
    """One episode of the closed loop. Deterministic given its inputs."""

    def __init__(self, params: Optional[PlantParams] = None,
                 env: Optional[EnvironmentModel] = None,
                 control: Optional[ImpedanceParams] = None,
                 mode: Optional[ControlMode] = None,
                 estimate_source: str = "oracle",
                 model=None):
        if estimate_source not in ESTIMATE_SOURCES:
            raise ValueError(f"estimate_source must be one of "
                             f"{ESTIMATE_SOURCES}, got {estimate_source!r}")
        if estimate_source == "model" and model is None:
            raise ValueError("estimate_source='model' needs a model")
        self.params = params if params is not None else PlantParams()
        self.env = env if env is not None else FreeSpace()
        self.controller = UnifiedController(
            mode if mode is not None else ControlMode.position(),
            control if control is not None else ImpedanceParams())
        self.estimate_source = estimate_source
        self.model = model
        self.state = initial_state(self.params)
        self.history = HistoryBuffer(dt=self.params.dt)
        self.prev_action = target_to_action(self.params.q_default,
                                            self.params)
        self._prev_env_force = vec3()

    # -- lifecycle ---------------------------------------------------------

    def reset(self, env: Optional[EnvironmentModel] = None) -> None:
        """Back to the initial scene; optionally swap the environment."""
        if env is not None:
            self.env = env
        self.env.reset()
        self.state = initial_state(self.params)
        self.history.clear()
        self.prev_action = target_to_action(self.params.q_default,
                                            self.params)
        self._prev_env_force = vec3()
        self.controller.reset()

    def set_mode(self, mode: ControlMode) -> None:
        self.controller.set_mode(mode)

    @property
    def mode(self) -> ControlMode:
        return self.controller.mode

    def kick(self, dv) -> None:
        """Instant base velocity change (domain-randomization pushes)."""
        self.state.v_base += as_vec3(dv)

    # -- estimation --------------------------------------------------------

    def _env_payload_gravity(self) -> Vec3:
        return vec3(0.0, 0.0, -self.env.payload_mass * GRAVITY)

    def _truth_now(self, f_ee_ext: Vec3, f_base_ext: Vec3) -> EstimatorOutput:
        f_now = self.env.contact_force(self.state.x_ee, self.state.v_ee,
                                       self.params.friction) \
            + f_ee_ext + self._env_payload_gravity()
        return EstimatorOutput(f_ee=f_now, f_base=f_base_ext.copy(),
                               x_ee=self.state.x_ee.copy(),
                               v_base=self.state.v_base.copy())

    def current_estimate(self, f_ee_ext: Vec3 = None,
                         f_base_ext: Vec3 = None) -> EstimatorOutput:
        src = self.estimate_source
        if src == "truth":
            return self._truth_now(
                vec3() if f_ee_ext is None else as_vec3(f_ee_ext),
                vec3() if f_base_ext is None else as_vec3(f_base_ext))
        if src == "oracle":
            if len(self.history) >= 2:
                return oracle_estimate(self.history, self.params,
                                       self.controller.params)
            return EstimatorOutput.zero()
        if src == "model":
            if self.history.full:
                return self.model.predict(self.history)
            return EstimatorOutput.zero()
        return EstimatorOutput.zero()

    # -- stepping ----------------------------------------------------------

    def tick(self, cmd: CommandBundle, f_ee_ext=None, f_base_ext=None,
             scene: Optional[list] = None) -> TickLog:
        f_ee_ext = vec3() if f_ee_ext is None else as_vec3(f_ee_ext)
        f_base_ext = vec3() if f_base_ext is None else as_vec3(f_base_ext)

        # Reject contradictory commands before touching any per-tick state;
        # a half-applied tick would leave the history buffer out of step.
        validate_command(self.controller.mode, cmd)

        obs = make_observation(self.state, cmd, self.prev_action,
                               f_base_ext, self.params)
        self.history.push(obs)

        est_truth = EstimatorOutput(
            f_ee=self._prev_env_force.copy(), f_base=f_base_ext.copy(),
            x_ee=self.state.x_ee.copy(), v_base=self.state.v_base.copy())
        est = self.current_estimate(f_ee_ext, f_base_ext)

        x_raw, v_target = self.controller.resolve(cmd, est.f_ee, est.f_base)

        # Route the target through the action encoding; clamp its norm to
        # the plant's hard bound (scaling toward the origin keeps every
        # action component in [-1, 1], see the geometry note in the tests).
        action = target_to_action(x_raw, self.params, clip=True)
        x_target = action_to_target(action, self.params)
        bound = 2.0 * self.params.workspace.r_max - 1e-6
        norm = float(np.linalg.norm(x_target))
        if norm > bound:
            x_target = x_target * (bound / norm)
            action = target_to_action(x_target, self.params, clip=False)
            x_target = action_to_target(action, self.params)

        new_state = step(self.state, (x_target, v_target), self.env,
                         f_ee_ext, self.params)
        self._prev_env_force = (new_state.f_contact + f_ee_ext
                                + self._env_payload_gravity())

        log = TickLog(t=obs.t, obs=obs, cmd=cmd.copy(), mode=self.mode,
                      est=est, est_truth=est_truth, action=action,
                      x_target=x_target, v_target=v_target, state=new_state,
                      f_ee_ext=f_ee_ext, f_base_ext=f_base_ext, scene=scene)
        self.state = new_state
        self.prev_action = action
        return log

    def run(self, n_ticks: int, cmd_fn, f_ee_fn=None, f_base_fn=None,
            scene_fn=None) -> List[TickLog]:
        """Convenience driver; each *_fn maps time -> value."""
        logs = []
        for _ in range(n_ticks):
            t = self.state.t
            cmd = cmd_fn(t)
            fe = f_ee_fn(t) if f_ee_fn else None
            fb = f_base_fn(t) if f_base_fn else None
            sc = scene_fn(t) if scene_fn else None
            logs.append(self.tick(cmd, fe, fb, scene=sc))
        return logs


# ---------------------------------------------------------------------------
# Tracking-quality metrics shared by evals and acceptance checks


@dataclass
class WindowStat:
    t_start: float
    t_end: float
    rms_error: float
    max_error: float


def _settling_mask(logs: List[TickLog], n_settle: int) -> np.ndarray:
    settling = np.zeros(len(logs), dtype=bool)
    for i in range(1, len(logs)):
        if not np.array_equal(logs[i].cmd.x_ee, logs[i - 1].cmd.x_ee):
            settling[i:i + n_settle] = True
    settling[:n_settle] = True
    return settling


def window_table(logs: List[TickLog], dt: float, window_s: float = 1.0,
                 settle_s: float = 0.5) -> List[tuple]:
    """Per-window errors for steady windows, keeping the start times.

    Each row is ``(t_start, track_err, est_err)`` where ``track_err`` is
    the per-axis max |x_ee - x_cmd| over the window and ``est_err`` the
    per-axis RMS of the EE force-estimate error against truth (zero-ish
    when the oracle was in the loop). Windows overlapping the settle
    interval after a setpoint change are dropped, as in
    :func:`tracking_windows`.
    """
    n_win = max(1, int(round(window_s / dt)))
    settling = _settling_mask(logs, int(round(settle_s / dt)))
    rows = []
    for start in range(0, len(logs) - n_win + 1, n_win):
        if settling[start:start + n_win].any():
            continue
        block = logs[start:start + n_win]
        errs = np.abs([l.state.x_ee - l.cmd.x_ee for l in block])
        est = np.asarray([l.est.f_ee - l.est_truth.f_ee for l in block])
        rows.append((block[0].t, errs.max(axis=0),
                     np.sqrt(np.mean(est ** 2, axis=0))))
    return rows


def axis_tracking_windows(logs: List[TickLog], dt: float,
                          window_s: float = 1.0,
                          settle_s: float = 0.5) -> np.ndarray:
    """Per-axis max |x_ee - x_cmd| for each steady window, shape (W, 3).

    Same windowing rules as :func:`tracking_windows` but the error is
    kept per axis instead of collapsed to a norm (the tracking criteria
    are stated per axis).
    """
    rows = [r[1] for r in window_table(logs, dt, window_s, settle_s)]
    return np.asarray(rows).reshape(-1, 3)


def tracking_windows(logs: List[TickLog], dt: float,
                     window_s: float = 1.0, settle_s: float = 0.5,
                     reference: str = "x_cmd") -> List[WindowStat]:
    """Windowed EE tracking error, skipping post-setpoint-change settling.

    Windows are contiguous ``window_s`` blocks; any window that overlaps
    the ``settle_s`` interval after a commanded-position change is dropped
    (the plant is allowed its transient). ``reference`` selects the error
    baseline: the raw commanded position, or the resolved target.
    """
    n_win = max(1, int(round(window_s / dt)))
    settling = _settling_mask(logs, int(round(settle_s / dt)))
    stats = []
    for start in range(0, len(logs) - n_win + 1, n_win):
        block = logs[start:start + n_win]
        if settling[start:start + n_win].any():
            continue
        if reference == "x_cmd":
            errs = [float(np.linalg.norm(l.state.x_ee - l.cmd.x_ee))
                    for l in block]
        else:
            errs = [float(np.linalg.norm(l.state.x_ee - l.x_target))
                    for l in block]
        stats.append(WindowStat(
            t_start=block[0].t, t_end=block[-1].t,
            rms_error=float(np.sqrt(np.mean(np.square(errs)))),
            max_error=float(np.max(errs))))
    return stats
