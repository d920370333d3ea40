"""Sensorless external-force estimation from proprioceptive history.

No force/torque sensor anywhere: the net force the environment applies to
the EE is recovered by inverting the plant model over the last control
step, and the analogous base quantities come from how the base "leans"
against pushes. Two estimators share one output contract:

* :func:`oracle_estimate` inverts the known model exactly (to float
  roundoff) using the last two observations. It is the supervision
  reference and the default in-the-loop source.
* :class:`RegressorModel`, a small MLP over a 32-tick observation window,
  trained against ground-truth labels from randomized rollouts. It never
  sees the plant parameters, which is the point: it has to absorb actuator
  strength, friction and payload variation from raw history.

Timing convention: the estimate produced from a window ending at tick k
refers to the net environment force that acted over the step (k-1) -> k
(forces are zero-order-held over a step, so this is a single well-defined
vector). Position/velocity outputs refer to tick k itself, as does the
base force (the lean responds instantaneously in this model).

The observation vector (31 floats) is, in order:
projected gravity (3), base angular velocity (3), EE position (3),
EE velocity (3), previous normalized action (3), command bundle (12:
v_base, x_ee, f_ee, f_base), and four foot phase clocks (trot pattern,
2 Hz). Base linear velocity is deliberately absent; estimating it is part
of the regressor's job.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .control import CommandBundle, ImpedanceParams, compute_base_target
from .mlp import (Adam, MLP, NormalizedMLP, Normalizer, SGDMomentum,
                  mse_loss_and_grads)
from .plant import (GRAVITY, PlantParams, PlantState, Vec3, action_to_target,
                    as_vec3, vec3)

HISTORY_LEN = 32
OBS_DIM = 31
EST_DIM = 12
GAIT_RATE_HZ = 2.0
FOOT_OFFSETS = (0.0, 0.5, 0.25, 0.75)  # trot: diagonal pairs in phase


class InsufficientHistory(Exception):
    """Not enough contiguous observations buffered for this estimator."""


class NonContiguousHistory(Exception):
    """Pushed observation does not follow the previous one by one dt."""


class TrainingDiverged(Exception):
    """Loss blew up and stayed blown up; training aborted."""


@dataclass
class Observation:
    """One proprioceptive snapshot, taken before the tick's step."""

    g_base: Vec3          # unit projected gravity in the body frame
    omega_base: Vec3      # rad/s; only wz is nonzero for this planar base
    q: Vec3               # EE position (body frame)
    q_dot: Vec3           # EE velocity
    a_prev: Vec3          # normalized action applied over the previous step
    cmd: CommandBundle    # operator command active this tick
    theta_feet: np.ndarray  # 4 phase clocks in [0, 1)
    t: float

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.g_base, self.omega_base, self.q,
                               self.q_dot, self.a_prev,
                               self.cmd.as_vector(), self.theta_feet])

    def to_json(self) -> dict:
        return {"g_base": self.g_base.tolist(),
                "omega_base": self.omega_base.tolist(),
                "q": self.q.tolist(), "q_dot": self.q_dot.tolist(),
                "a_prev": self.a_prev.tolist(), "cmd": self.cmd.to_json(),
                "theta_feet": self.theta_feet.tolist(), "t": self.t}

    @staticmethod
    def from_json(d: dict) -> "Observation":
        return Observation(
            as_vec3(d["g_base"]), as_vec3(d["omega_base"]), as_vec3(d["q"]),
            as_vec3(d["q_dot"]), as_vec3(d["a_prev"]),
            CommandBundle.from_json(d["cmd"]),
            np.asarray(d["theta_feet"], dtype=np.float64), float(d["t"]))


def foot_phases(t: float) -> np.ndarray:
    """Trot clock: four phases advancing at GAIT_RATE_HZ with fixed offsets."""
    return np.mod(GAIT_RATE_HZ * t + np.asarray(FOOT_OFFSETS), 1.0)


def lean_gravity(f_base: Vec3, params: PlantParams) -> Vec3:
    """Synthetic lean response: projected gravity tilts with base load.

    A legged base braces against pushes by leaning; the tilt is what makes
    base forces observable without any force sensing. We model the static
    response: tilt components proportional to force over weight, plus a
    bias from the center-of-mass offset over its height. The vector is
    normalized like a real projected-gravity observation.
    """
    weight = params.base_mass * GRAVITY
    ax = f_base[0] / weight + params.com_offset[0] / params.com_height
    ay = f_base[1] / weight + params.com_offset[1] / params.com_height
    g = vec3(ax, ay, -1.0)
    return g / float(np.linalg.norm(g))


def invert_lean(g_base: Vec3, params: PlantParams) -> Vec3:
    """Exact inverse of :func:`lean_gravity` given known params."""
    # g_base is proportional to (ax, ay, -1); recover the ratios.
    ax = -g_base[0] / g_base[2]
    ay = -g_base[1] / g_base[2]
    weight = params.base_mass * GRAVITY
    fx = (ax - params.com_offset[0] / params.com_height) * weight
    fy = (ay - params.com_offset[1] / params.com_height) * weight
    return vec3(fx, fy, 0.0)


def make_observation(state: PlantState, cmd: CommandBundle, a_prev: Vec3,
                     f_base_ext: Vec3, params: PlantParams) -> Observation:
    return Observation(
        g_base=lean_gravity(as_vec3(f_base_ext), params),
        omega_base=vec3(0.0, 0.0, state.v_base[2]),
        q=state.x_ee.copy(),
        q_dot=state.v_ee.copy(),
        a_prev=as_vec3(a_prev).copy(),
        cmd=cmd.copy(),
        theta_feet=foot_phases(state.t),
        t=state.t)


class HistoryBuffer:
    """Fixed-capacity window of contiguous observations."""

    def __init__(self, horizon: int = HISTORY_LEN, dt: float = 0.02):
        if horizon < 2:
            raise ValueError("horizon must be at least 2")
        self.horizon = int(horizon)
        self.dt = float(dt)
        self._buf: deque = deque(maxlen=self.horizon)

    def __len__(self):
        return len(self._buf)

    @property
    def full(self) -> bool:
        return len(self._buf) == self.horizon

    def push(self, obs: Observation) -> None:
        if self._buf:
            gap = obs.t - self._buf[-1].t
            if abs(gap - self.dt) > 1e-9:
                raise NonContiguousHistory(
                    f"observation at t={obs.t:.6f} does not follow "
                    f"t={self._buf[-1].t:.6f} by dt={self.dt}")
        self._buf.append(obs)

    def clear(self) -> None:
        self._buf.clear()

    def latest(self) -> Observation:
        if not self._buf:
            raise InsufficientHistory("empty history")
        return self._buf[-1]

    def items(self) -> List[Observation]:
        return list(self._buf)

    def window_vector(self) -> np.ndarray:
        """Flattened (horizon * OBS_DIM) input for the regressor."""
        if not self.full:
            raise InsufficientHistory(
                f"need {self.horizon} observations, have {len(self._buf)}")
        return np.concatenate([o.to_vector() for o in self._buf])


@dataclass
class EstimatorOutput:
    """Estimated net environment interaction, 12 numbers."""

    f_ee: Vec3 = field(default_factory=vec3)
    f_base: Vec3 = field(default_factory=vec3)
    x_ee: Vec3 = field(default_factory=vec3)
    v_base: Vec3 = field(default_factory=vec3)

    def __post_init__(self):
        self.f_ee = as_vec3(self.f_ee)
        self.f_base = as_vec3(self.f_base)
        self.x_ee = as_vec3(self.x_ee)
        self.v_base = as_vec3(self.v_base)

    @staticmethod
    def zero() -> "EstimatorOutput":
        return EstimatorOutput()

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.f_ee, self.f_base, self.x_ee,
                               self.v_base])

    @staticmethod
    def from_vector(v) -> "EstimatorOutput":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (EST_DIM,):
            raise ValueError(f"expected {EST_DIM} values, got {v.shape}")
        return EstimatorOutput(v[0:3], v[3:6], v[6:9], v[9:12])

    def to_json(self) -> dict:
        return {"f_ee": self.f_ee.tolist(), "f_base": self.f_base.tolist(),
                "x_ee": self.x_ee.tolist(), "v_base": self.v_base.tolist()}

    @staticmethod
    def from_json(d: dict) -> "EstimatorOutput":
        return EstimatorOutput(d["f_ee"], d["f_base"], d["x_ee"],
                               d["v_base"])


def oracle_estimate(history: HistoryBuffer, params: PlantParams,
                    control: Optional[ImpedanceParams] = None
                    ) -> EstimatorOutput:
    """Exact model inversion from the last two observations.

    EE force: the semi-implicit step gives v_k = v_{k-1} + dt * F_net/m, so
    the total force over the last step is m * (v_k - v_{k-1})/dt; subtract
    the actuator force (reconstructible from a_prev and the known gains)
    and the known gripper-payload weight, and the remainder is the net
    environment force. Unknown payloads deliberately remain in the
    estimate: their weight *is* an external force as far as the robot
    knows.

    Base force: exact inversion of the lean response. Base velocity: the
    window carries no direct measurement, so the known velocity tracker is
    simulated across the window (seeded at its own target, i.e. assuming
    it had converged before the window began) driven by the per-tick
    inverted base force; assumes the standard compensated base law was
    active. Yaw rate is read directly from the gyro.
    """
    if control is None:
        control = ImpedanceParams()
    obs = history.items()
    if len(obs) < 2:
        raise InsufficientHistory("oracle needs two observations")
    prev, cur = obs[-2], obs[-1]
    dt = history.dt

    # --- EE force over the step prev -> cur.
    x_target = action_to_target(cur.a_prev, params)
    raw = params.pd_kp * (x_target - prev.q) - params.pd_kd * prev.q_dot
    f_act = params.motor_strength * np.clip(raw, -params.force_limit,
                                            params.force_limit)
    m_known = params.mass_ee + params.payload
    accel = (cur.q_dot - prev.q_dot) / dt
    f_grav_known = vec3(0.0, 0.0, -params.payload * GRAVITY)
    f_ee = m_known * accel - f_act - f_grav_known

    # --- Base force now, from the lean.
    f_base = invert_lean(cur.g_base, params)

    # --- Base velocity: simulate the known tracker across the window.
    alpha = dt * params.base_damping / params.base_mass
    v = None
    for o in obs:
        fb = invert_lean(o.g_base, params)
        v_t = compute_base_target(o.cmd.v_base, o.cmd.f_base, fb, control.D)
        if v is None:
            v = v_t.copy()
        else:
            v = v + alpha * (v_t - v)
    v_base = vec3(v[0], v[1], cur.omega_base[2])

    return EstimatorOutput(f_ee=f_ee, f_base=f_base, x_ee=cur.q.copy(),
                           v_base=v_base)


# ---------------------------------------------------------------------------
# Learned regressor


def obs_feature_ranges() -> Tuple[np.ndarray, np.ndarray]:
    """Fixed physical ranges for normalizing one observation vector."""
    lo = np.concatenate([
        [-1.0] * 3,            # g_base
        [-1.0] * 3,            # omega_base
        [-1.0] * 3,            # q
        [-3.0] * 3,            # q_dot
        [-1.0] * 3,            # a_prev
        [-1.0, -1.0, -1.0],    # cmd v_base
        [-1.0] * 3,            # cmd x_ee
        [-80.0] * 3,           # cmd f_ee
        [-80.0] * 3,           # cmd f_base
        [0.0] * 4,             # theta_feet
    ])
    hi = np.concatenate([
        [1.0] * 3, [1.0] * 3, [1.0] * 3, [3.0] * 3, [1.0] * 3,
        [1.0, 1.0, 1.0], [1.0] * 3, [80.0] * 3, [80.0] * 3, [1.0] * 4,
    ])
    return lo, hi


def output_ranges() -> Tuple[np.ndarray, np.ndarray]:
    lo = np.concatenate([[-150.0] * 3, [-80.0] * 3, [-1.0] * 3,
                         [-1.2, -1.2, -1.0]])
    hi = np.concatenate([[150.0] * 3, [80.0] * 3, [1.0] * 3,
                         [1.2, 1.2, 1.0]])
    return lo, hi


# Hard sanity clamps on regressor outputs (the oracle is never clamped).
_CLAMP_LO = np.concatenate([[-250.0] * 6, [-1.7] * 3, [-2.0] * 3])
_CLAMP_HI = -_CLAMP_LO


class RegressorModel:
    """MLP force/state estimator over flattened observation windows."""

    def __init__(self, net: NormalizedMLP, horizon: int = HISTORY_LEN):
        self.net = net
        self.horizon = int(horizon)

    @staticmethod
    def fresh(hidden=(128, 128), horizon: int = HISTORY_LEN,
              seed: int = 0) -> "RegressorModel":
        in_dim = horizon * OBS_DIM
        sizes = [in_dim, *hidden, EST_DIM]
        lo, hi = obs_feature_ranges()
        in_norm = Normalizer(np.tile(lo, horizon), np.tile(hi, horizon))
        out_lo, out_hi = output_ranges()
        net = NormalizedMLP(MLP(sizes, seed=seed), in_norm,
                            Normalizer(out_lo, out_hi),
                            meta={"kind": "force_estimator",
                                  "horizon": horizon, "obs_dim": OBS_DIM})
        return RegressorModel(net, horizon)

    def predict(self, history: HistoryBuffer) -> EstimatorOutput:
        x = history.window_vector()
        y = np.clip(self.net.predict(x), _CLAMP_LO, _CLAMP_HI)
        return EstimatorOutput.from_vector(y)

    def predict_matrix(self, windows: np.ndarray) -> np.ndarray:
        """Batched prediction on (N, horizon*OBS_DIM) raw windows."""
        return np.clip(self.net.predict(windows), _CLAMP_LO, _CLAMP_HI)

    def save(self, path) -> None:
        self.net.save(path)

    @staticmethod
    def load(path) -> "RegressorModel":
        net = NormalizedMLP.load(path)
        if net.meta.get("kind") != "force_estimator":
            raise ValueError(f"{path} is not a force estimator model")
        return RegressorModel(net, int(net.meta.get("horizon", HISTORY_LEN)))


class EstimatorDataset:
    """Per-episode observation/label matrices with window indexing.

    Keeping whole episodes and gathering windows at batch time keeps the
    memory footprint tiny compared to materializing every flattened
    window. Each episode may carry the generating plant's parameters
    (as a JSON dict) so the oracle can be scored on its own plant.
    """

    def __init__(self, episodes: List[tuple], horizon: int = HISTORY_LEN):
        self.horizon = int(horizon)
        self.episodes = []
        self.params: List[Optional[dict]] = []
        self.index: List[Tuple[int, int]] = []
        for e, entry in enumerate(episodes):
            if len(entry) == 2:
                obs_mat, label_mat = entry
                par = None
            else:
                obs_mat, label_mat, par = entry
            obs_mat = np.asarray(obs_mat, dtype=np.float64)
            label_mat = np.asarray(label_mat, dtype=np.float64)
            if obs_mat.shape[1] != OBS_DIM or label_mat.shape[1] != EST_DIM:
                raise ValueError("bad episode matrix shapes")
            if obs_mat.shape[0] != label_mat.shape[0]:
                raise ValueError("obs/label length mismatch")
            self.episodes.append((obs_mat, label_mat))
            self.params.append(par)
            for k in range(self.horizon - 1, obs_mat.shape[0]):
                self.index.append((e, k))

    def __len__(self):
        return len(self.index)

    def episode_params(self, e: int) -> PlantParams:
        par = self.params[e]
        return PlantParams() if par is None else PlantParams.from_json(par)

    def gather(self, picks) -> Tuple[np.ndarray, np.ndarray]:
        X = np.empty((len(picks), self.horizon * OBS_DIM))
        Y = np.empty((len(picks), EST_DIM))
        for i, (e, k) in enumerate(picks):
            obs_mat, label_mat = self.episodes[e]
            X[i] = obs_mat[k - self.horizon + 1:k + 1].reshape(-1)
            Y[i] = label_mat[k]
        return X, Y

    def sample_batch(self, rng: np.random.Generator,
                     size: int) -> Tuple[np.ndarray, np.ndarray]:
        picks = [self.index[i] for i in
                 rng.integers(0, len(self.index), size=size)]
        return self.gather(picks)

    def all_windows(self, stride: int = 1) -> Tuple[np.ndarray, np.ndarray]:
        return self.gather(self.index[::stride])

    def windows_with_episode(self, stride: int = 1):
        """(X, Y, episode_index_per_row) for per-plant oracle scoring."""
        picks = self.index[::stride]
        X, Y = self.gather(picks)
        return X, Y, np.array([e for e, _ in picks], dtype=int)

    def save(self, path) -> None:
        import json as _json

        obs = np.stack([e[0] for e in self.episodes])
        labels = np.stack([e[1] for e in self.episodes])
        params = np.array([_json.dumps(p) if p is not None else ""
                           for p in self.params])
        np.savez_compressed(path, obs=obs, labels=labels, params=params,
                            horizon=self.horizon)

    @staticmethod
    def load(path) -> "EstimatorDataset":
        import json as _json

        with np.load(path) as z:
            obs, labels = z["obs"], z["labels"]
            horizon = int(z["horizon"])
            raw = z["params"] if "params" in z.files else None
        params = [None] * obs.shape[0] if raw is None else \
            [(_json.loads(s) if s else None) for s in raw]
        return EstimatorDataset(
            [(obs[i], labels[i], params[i]) for i in range(obs.shape[0])],
            horizon)


def train_regressor(dataset: EstimatorDataset,
                    model: Optional[RegressorModel] = None,
                    steps: int = 4000, batch: int = 256, lr: float = 1e-3,
                    lr_final: Optional[float] = None, momentum: float = 0.9,
                    optimizer: str = "sgd", weight_decay: float = 0.0,
                    seed: int = 0, log_every: int = 200
                    ) -> Tuple[RegressorModel, dict]:
    """Minimize MSE in normalized target space over random minibatches.

    The default optimizer is plain SGD + momentum. The window features are
    strongly correlated (overlapping history ticks), which leaves the force
    heads poorly conditioned; ``optimizer="adam"`` trains those to several
    times lower error in the same number of steps, and is what the shipped
    training pipeline uses. ``lr_final`` turns on a linear learning-rate
    ramp from ``lr`` down to that value over the run; left as None the rate
    is constant. ``weight_decay`` adds an L2 pull toward zero on the weight
    matrices (not biases), applied to the gradients before the optimizer.
    """
    if model is None:
        model = RegressorModel.fresh(seed=seed)
    rng = np.random.default_rng(seed + 1)
    if optimizer == "sgd":
        opt = SGDMomentum(model.net.mlp, lr=lr, momentum=momentum)
    elif optimizer == "adam":
        opt = Adam(model.net.mlp, lr=lr)
    else:
        raise ValueError(f"unknown optimizer {optimizer!r}")
    in_norm, out_norm = model.net.in_norm, model.net.out_norm
    losses = []
    warmup = []
    reference = None
    bad_streak = 0
    for step_i in range(steps):
        if lr_final is not None and steps > 1:
            frac = step_i / (steps - 1)
            opt.lr = lr + (lr_final - lr) * frac
        X, Y = dataset.sample_batch(rng, batch)
        Xn = in_norm.transform(X)
        Yn = out_norm.transform(Y)
        loss, gw, gb = mse_loss_and_grads(model.net.mlp, Xn, Yn)
        if weight_decay > 0.0:
            gw = [g + weight_decay * w
                  for g, w in zip(gw, model.net.mlp.weights)]
        opt.step(gw, gb)
        if step_i < 20:
            warmup.append(loss)
        elif reference is None:
            reference = float(np.median(warmup))
        # NaN comparisons are False, so test finiteness explicitly or a
        # NaN loss would look healthy forever.
        if reference is not None and (not np.isfinite(loss)
                                      or loss > 10.0 * reference):
            bad_streak += 1
            if bad_streak >= 500:
                raise TrainingDiverged(
                    f"loss {loss:.3e} stuck above 10x initial {reference:.3e}")
        else:
            bad_streak = 0
        if step_i % log_every == 0 or step_i == steps - 1:
            losses.append(loss)
    report = {"steps": steps, "batch": batch, "lr": lr,
              "momentum": momentum, "optimizer": optimizer,
              "weight_decay": weight_decay, "loss_samples": losses,
              "final_loss": losses[-1] if losses else None}
    return model, report


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = float(np.sqrt((a * a).sum() * (b * b).sum()))
    if denom == 0.0:
        return 1.0 if np.allclose(a, b) else 0.0
    return float((a * b).sum() / denom)


AXIS_NAMES = ["f_ee_x", "f_ee_y", "f_ee_z", "f_base_x", "f_base_y",
              "f_base_z", "x_ee_x", "x_ee_y", "x_ee_z", "v_base_x",
              "v_base_y", "v_base_z"]


def evaluate_estimator(model: RegressorModel, dataset: EstimatorDataset,
                       control: Optional[ImpedanceParams] = None,
                       stride: int = 2) -> dict:
    """Held-out metrics: per-axis RMS for the regressor, exactness of the
    oracle on the same windows (scored against each episode's own plant),
    and learned-vs-oracle correlation."""
    X, Y, ep = dataset.windows_with_episode(stride=stride)
    pred = model.predict_matrix(X)

    # Oracle on the same windows, rebuilt from the raw vectors.
    oracle = np.empty_like(Y)
    for i in range(X.shape[0]):
        params = dataset.episode_params(int(ep[i]))
        window = X[i].reshape(dataset.horizon, OBS_DIM)
        hist = HistoryBuffer(dataset.horizon, dt=params.dt)
        t0 = 0.0
        for row in window:
            hist.push(_obs_from_vector(row, t0))
            t0 += params.dt
        oracle[i] = oracle_estimate(hist, params, control).as_vector()

    err = pred - Y
    oerr = oracle - Y
    report = {
        "n_windows": int(X.shape[0]),
        "rms": {AXIS_NAMES[j]: float(np.sqrt(np.mean(err[:, j] ** 2)))
                for j in range(EST_DIM)},
        "oracle_rms": {AXIS_NAMES[j]: float(np.sqrt(np.mean(oerr[:, j] ** 2)))
                       for j in range(EST_DIM)},
        "pearson_vs_oracle": {
            AXIS_NAMES[j]: _pearson(pred[:, j], oracle[:, j])
            for j in range(EST_DIM)},
    }
    # Error binned by EE force-label magnitude.
    mag = np.linalg.norm(Y[:, 0:3], axis=1)
    edges = [0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, float("inf")]
    bins = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mask = (mag >= lo) & (mag < hi)
        row = {"bin_lo": lo, "bin_hi": hi, "n": int(mask.sum())}
        for j in range(6):
            row[f"rms_{AXIS_NAMES[j]}"] = (
                float(np.sqrt(np.mean(err[mask, j] ** 2)))
                if mask.any() else float("nan"))
        bins.append(row)
    report["force_bins"] = bins
    return report


def _obs_from_vector(v: np.ndarray, t: float) -> Observation:
    """Inverse of Observation.to_vector (time is not in the vector)."""
    return Observation(
        g_base=v[0:3].copy(), omega_base=v[3:6].copy(), q=v[6:9].copy(),
        q_dot=v[9:12].copy(), a_prev=v[12:15].copy(),
        cmd=CommandBundle.from_vector(v[15:27]),
        theta_feet=v[27:31].copy(), t=t)


def write_eval_csv(report: dict, path) -> None:
    """Stable CSV: one metrics row per axis, then the force-bin table."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["axis", "rms", "oracle_rms", "pearson_vs_oracle"])
        for name in AXIS_NAMES:
            w.writerow([name, repr(report["rms"][name]),
                        repr(report["oracle_rms"][name]),
                        repr(report["pearson_vs_oracle"][name])])
        w.writerow([])
        bin_cols = ["bin_lo", "bin_hi", "n"] + \
            [f"rms_{AXIS_NAMES[j]}" for j in range(6)]
        w.writerow(bin_cols)
        for row in report["force_bins"]:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                        for c in bin_cols])
