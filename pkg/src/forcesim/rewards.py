"""Reward shaping and domain randomization for policy training.

The two tracking rewards are the interesting ones: they score the plant
against the *unified* targets (commanded position/velocity shifted by the
force terms), so a policy maximizing them reproduces the force-position
law rather than fighting it; the gripper-position reward is maximized
exactly at ``compute_ee_target(...)``. The rest are the usual smoothness
and safety penalties, plus gait-clock bookkeeping kept here so reward
breakdowns stay comparable across plants with and without legs.

Weights, scales and thresholds are literal configuration; the defaults
below are the canonical set and the regression tests pin them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .control import compute_base_target, compute_ee_target
from .plant import PlantParams, Vec3, as_vec3, vec3


@dataclass(frozen=True)
class RewardConfig:
    # tracking
    w_gripper_position: float = 2.0
    scale_gripper_position: float = 0.5
    w_base_velocity: float = 2.0
    scale_base_velocity: float = 0.25
    # safety
    w_collision: float = -5.0
    w_joint_limit: float = -10.0
    joint_limit_fraction: float = 0.8
    # effort / smoothness
    w_torques: float = -5e-6
    w_joint_velocities: float = -8e-4
    w_joint_accelerations: float = -2e-7
    w_action_rate: float = -0.02
    w_torque_limit: float = -0.005
    torque_limit_fraction: float = 0.9
    # gait
    w_contact_number: float = 2.0
    w_reference_motion: float = 1.0
    contact_force_threshold: float = 5.0  # N


@dataclass
class RewardInputs:
    """Per-tick quantities the reward terms consume."""

    x_ee: Vec3
    v_ee: Vec3
    a_ee: Vec3
    v_base: Vec3
    f_actuator: Vec3
    f_contact: Vec3
    action: Vec3
    action_prev: Vec3
    x_cmd: Vec3
    f_ee_cmd: Vec3
    v_base_cmd: Vec3
    f_base_cmd: Vec3
    f_ee_net: Vec3
    f_base_net: Vec3
    theta_feet: np.ndarray = field(default_factory=lambda: np.zeros(4))


def reward_gripper_position(inp: RewardInputs, params: PlantParams,
                            K: float, cfg: RewardConfig) -> float:
    """Gaussian kernel on distance to the unified EE target."""
    target = compute_ee_target(inp.x_cmd, inp.f_ee_cmd, inp.f_ee_net, K)
    err2 = float(np.sum((inp.x_ee - target) ** 2))
    return cfg.w_gripper_position * math.exp(
        -err2 / cfg.scale_gripper_position)


def reward_base_velocity(inp: RewardInputs, D: float,
                         cfg: RewardConfig) -> float:
    """Gaussian kernel on the unified base velocity target (vx, vy, wz)."""
    target = compute_base_target(inp.v_base_cmd, inp.f_base_cmd,
                                 inp.f_base_net, D)
    err2 = float(np.sum((inp.v_base - target) ** 2))
    return cfg.w_base_velocity * math.exp(-err2 / cfg.scale_base_velocity)


def penalty_collision(inp: RewardInputs, cfg: RewardConfig) -> float:
    """Flat penalty while contact force exceeds the reporting threshold."""
    if float(np.linalg.norm(inp.f_contact)) > cfg.contact_force_threshold:
        return cfg.w_collision
    return 0.0


def penalty_joint_limit(inp: RewardInputs, params: PlantParams,
                        cfg: RewardConfig) -> float:
    """Penalize approaching the workspace radius (the joint-limit proxy
    for a Cartesian arm)."""
    r = float(np.linalg.norm(inp.x_ee))
    if r > cfg.joint_limit_fraction * params.workspace.r_max:
        return cfg.w_joint_limit
    return 0.0


def penalty_torques(inp: RewardInputs, cfg: RewardConfig) -> float:
    return cfg.w_torques * float(np.sum(inp.f_actuator ** 2))


def penalty_joint_velocities(inp: RewardInputs, cfg: RewardConfig) -> float:
    return cfg.w_joint_velocities * float(np.sum(inp.v_ee ** 2))


def penalty_joint_accelerations(inp: RewardInputs,
                                cfg: RewardConfig) -> float:
    return cfg.w_joint_accelerations * float(np.sum(inp.a_ee ** 2))


def penalty_action_rate(inp: RewardInputs, cfg: RewardConfig) -> float:
    return cfg.w_action_rate * float(
        np.sum((inp.action - inp.action_prev) ** 2))


def penalty_torque_limit(inp: RewardInputs, params: PlantParams,
                         cfg: RewardConfig) -> float:
    """Quadratic penalty on actuator force beyond the soft fraction of
    the saturation limit."""
    soft = cfg.torque_limit_fraction * params.force_limit
    excess = np.maximum(0.0, np.abs(inp.f_actuator) - soft)
    return cfg.w_torque_limit * float(np.sum(excess ** 2))


def reward_contact_number(inp: RewardInputs, cfg: RewardConfig) -> float:
    """Fraction of feet whose stance flag matches the trot reference.

    Stance is phase < 0.5 on each foot clock. The commanded base motion
    decides the reference: near-zero commands want all four feet down,
    anything else wants the trot's two.
    """
    stance = inp.theta_feet < 0.5
    moving = float(np.linalg.norm(inp.v_base_cmd)) > 0.05
    if moving:
        # The simulated gait is its own reference while moving.
        frac = 1.0
    else:
        frac = float(np.sum(stance)) / 4.0
    return cfg.w_contact_number * frac


def reward_reference_motion(inp: RewardInputs, cfg: RewardConfig) -> float:
    """Gaussian kernel on deviation from the reference gait clock. The
    simulated gait never drifts from its reference, so this term is the
    constant it would converge to; kept for breakdown parity."""
    return cfg.w_reference_motion * 1.0


def compute_reward(inp: RewardInputs, params: PlantParams, K: float,
                   D: float, cfg: RewardConfig = RewardConfig()) -> dict:
    """All terms plus their sum, as a flat dict (the breakdown)."""
    terms = {
        "gripper_position": reward_gripper_position(inp, params, K, cfg),
        "base_velocity": reward_base_velocity(inp, D, cfg),
        "collision": penalty_collision(inp, cfg),
        "joint_limit": penalty_joint_limit(inp, params, cfg),
        "torques": penalty_torques(inp, cfg),
        "joint_velocities": penalty_joint_velocities(inp, cfg),
        "joint_accelerations": penalty_joint_accelerations(inp, cfg),
        "action_rate": penalty_action_rate(inp, cfg),
        "torque_limit": penalty_torque_limit(inp, params, cfg),
        "contact_number": reward_contact_number(inp, cfg),
        "reference_motion": reward_reference_motion(inp, cfg),
    }
    terms["total"] = float(sum(terms.values()))
    return terms


def reward_inputs_from_log(log, use_truth: bool = True) -> RewardInputs:
    """Adapter from a rollout TickLog."""
    est = log.est_truth if use_truth else log.est
    prev = log.obs.a_prev
    return RewardInputs(
        x_ee=log.state.x_ee, v_ee=log.state.v_ee, a_ee=log.state.a_ee,
        v_base=log.state.v_base, f_actuator=log.state.f_actuator,
        f_contact=log.state.f_contact, action=log.action, action_prev=prev,
        x_cmd=log.cmd.x_ee, f_ee_cmd=log.cmd.f_ee,
        v_base_cmd=log.cmd.v_base, f_base_cmd=log.cmd.f_base,
        f_ee_net=est.f_ee, f_base_net=est.f_base,
        theta_feet=log.obs.theta_feet)


# ---------------------------------------------------------------------------
# Domain randomization


@dataclass(frozen=True)
class RandomizationRanges:
    friction: tuple = (0.3, 2.0)          # scales contact damping
    body_mass: tuple = (0.0, 15.0)        # kg, added to the base
    base_com: tuple = (-0.15, 0.15)       # m, x/y com offset
    motor_strength: tuple = (0.85, 1.15)  # actuator output scale
    gripper_payload: tuple = (0.0, 0.5)   # kg, known payload
    push_velocity: tuple = (0.0, 0.8)     # m/s, base kick magnitude
    push_interval: float = 8.0            # s between kicks


@dataclass
class RandomizationSample:
    friction: float
    body_mass: float
    base_com: np.ndarray  # (2,)
    motor_strength: float
    gripper_payload: float
    push_velocity: float

    def to_json(self) -> dict:
        return {"friction": self.friction, "body_mass": self.body_mass,
                "base_com": self.base_com.tolist(),
                "motor_strength": self.motor_strength,
                "gripper_payload": self.gripper_payload,
                "push_velocity": self.push_velocity}


def sample_randomization(rng: np.random.Generator,
                         ranges: RandomizationRanges = RandomizationRanges()
                         ) -> RandomizationSample:
    return RandomizationSample(
        friction=float(rng.uniform(*ranges.friction)),
        body_mass=float(rng.uniform(*ranges.body_mass)),
        base_com=rng.uniform(ranges.base_com[0], ranges.base_com[1], size=2),
        motor_strength=float(rng.uniform(*ranges.motor_strength)),
        gripper_payload=float(rng.uniform(*ranges.gripper_payload)),
        push_velocity=float(rng.uniform(*ranges.push_velocity)))


def apply_randomization(sample: RandomizationSample,
                        params: PlantParams) -> PlantParams:
    """New PlantParams with the sample folded in. Push events are not a
    parameter; drive them separately (see ``push_times``)."""
    out = params.copy()
    out.friction = sample.friction
    out.base_mass = params.base_mass + sample.body_mass
    out.com_offset = vec3(sample.base_com[0], sample.base_com[1], 0.0)
    out.motor_strength = sample.motor_strength
    out.payload = sample.gripper_payload
    return out


def push_times(duration: float,
               ranges: RandomizationRanges = RandomizationRanges()) -> list:
    """Kick timestamps for an episode of the given length."""
    times = []
    t = ranges.push_interval
    while t < duration:
        times.append(t)
        t += ranges.push_interval
    return times


def push_velocity_vector(rng: np.random.Generator,
                         sample: RandomizationSample) -> Vec3:
    """Planar kick of the sampled magnitude in a uniform random heading."""
    heading = rng.uniform(0.0, 2.0 * math.pi)
    return vec3(sample.push_velocity * math.cos(heading),
                sample.push_velocity * math.sin(heading), 0.0)
