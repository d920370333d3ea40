"""Rigid end-effector and mobile-base plant with pluggable contact environments.

The plant is deliberately small: a 3-DoF Cartesian end-effector modeled as a
point mass driven by a saturated PD actuator, mounted on a planar base that
tracks commanded body-frame velocities as a first-order lag. Integration is
semi-implicit Euler at a fixed step, which keeps the whole thing deterministic
and lets the force estimator invert the model exactly.

Conventions
-----------
* All vectors are float64 numpy arrays of length 3.
* EE state lives in the body frame of the base (the arm does not know the
  base moved); base pose lives in the world frame as (x, y, yaw).
* `v_base` packs (vx, vy, wz): planar body-frame velocity plus yaw rate.
* Environments exert forces on the EE only. The base is a velocity tracker;
  disturbance forces on the base are handled upstream as control/estimation
  signals, not as plant inputs. This mirrors a locomotion controller that
  keeps tracking its velocity target regardless of who is pushing.
* Unknown payload gravity acts along -z. There is no gravity on the bare EE
  itself (the arm's own weight is assumed compensated by the low-level
  controller, as usual for torque-controlled arms).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np

GRAVITY = 9.81

Vec3 = np.ndarray


def vec3(x=0.0, y=0.0, z=0.0) -> Vec3:
    return np.array([x, y, z], dtype=np.float64)


def as_vec3(value) -> Vec3:
    out = np.asarray(value, dtype=np.float64)
    if out.shape != (3,):
        raise ValueError(f"expected 3-vector, got shape {out.shape}")
    return out


ZERO3 = vec3()


class PlantError(Exception):
    """Base class for plant construction/runtime errors."""


class UnstableGains(PlantError):
    """PD gains violate the discrete stability bound for the chosen dt."""


class NonFiniteState(PlantError):
    """A step produced NaN/inf state (bad inputs or blown-up dynamics)."""


class ActionOutOfRange(PlantError):
    """Normalized action component left [-1, 1]."""


class TargetOutOfBounds(PlantError):
    """EE position target further than twice the workspace radius."""


@dataclass(frozen=True)
class Workspace:
    """Reachable shell of the end-effector, radii in meters."""

    r_min: float = 0.35
    r_max: float = 0.85

    def contains(self, x: Vec3) -> bool:
        r = float(np.linalg.norm(x))
        return self.r_min <= r <= self.r_max


@dataclass
class PlantParams:
    """Physical constants of the plant.

    The PD gains are chosen so the discrete closed loop is stable and fast
    at dt=0.02 (eigenvalues of the free-space companion matrix sit well
    inside the unit circle) and so that the actuator is stiff relative to
    the impedance constants used by the controller; see the construction
    check in ``__post_init__``.

    ``action_scale`` and ``q_default`` define the normalized action encoding
    ``x_target = action_scale * a + q_default`` used when targets are routed
    through [-1, 1]^3 actions (the estimator reconstructs applied targets
    from recorded actions, so the loop quantizes through this encoding).
    """

    mass_ee: float = 4.0          # kg, end-effector apparent mass
    pd_kp: float = 8000.0         # N/m
    pd_kd: float = 120.0          # N s/m
    force_limit: float = 120.0    # N per axis, actuator saturation
    base_mass: float = 30.0       # kg, sets the base tracking time constant
    base_damping: float = 75.0    # N s/m, base velocity tracking "drag"
    dt: float = 0.02              # s, fixed integration step
    workspace: Workspace = field(default_factory=Workspace)
    friction: float = 1.0         # scales contact damping (randomized)
    payload: float = 0.0          # kg, known gripper payload (randomized)
    motor_strength: float = 1.0   # scales actuator output (randomized)
    com_offset: Vec3 = field(default_factory=vec3)  # m, base com shift
    com_height: float = 0.5       # m, lever arm for the lean response
    action_scale: float = 1.2     # m, action-to-target scaling
    q_default: Vec3 = field(default_factory=lambda: vec3(0.4, 0.0, 0.0))

    def __post_init__(self):
        self.com_offset = as_vec3(self.com_offset)
        self.q_default = as_vec3(self.q_default)
        if not (0.0 < self.dt <= 0.05):
            raise ValueError(f"dt must be in (0, 0.05], got {self.dt}")
        for name in ("mass_ee", "pd_kp", "pd_kd", "force_limit", "base_mass",
                     "base_damping", "friction", "com_height", "action_scale"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.payload < 0.0:
            raise ValueError("payload must be non-negative")
        if not (0.0 < self.motor_strength <= 2.0):
            raise ValueError("motor_strength must be in (0, 2]")
        # Discrete stability of the semi-implicit loop: with K^ = kp dt^2/m
        # and C^ = kd dt/m the closed-loop eigenvalues stay inside the unit
        # circle iff C^ < 2 and K^ < 4 - 2 C^. Contact adds stiffness and
        # damping on top, so demand comfortable margin against the stock
        # wall (5000 N/m, 50 N s/m at max friction 2.0).
        k_hat = self.pd_kp * self.dt ** 2 / self.mass_ee
        c_hat = self.pd_kd * self.dt / self.mass_ee
        if c_hat >= 2.0:
            raise UnstableGains(
                f"pd_kd*dt/mass_ee = {c_hat:.3f} >= 2; lower pd_kd or dt")
        if k_hat >= 4.0 - 2.0 * c_hat:
            raise UnstableGains(
                f"pd_kp*dt^2/mass_ee = {k_hat:.3f} >= 4 - 2*{c_hat:.3f}; "
                "lower pd_kp or dt")
        if self.base_damping * self.dt / self.base_mass >= 2.0:
            raise UnstableGains("base tracker unstable: D*dt/base_mass >= 2")

    def copy(self) -> "PlantParams":
        return replace(self, com_offset=self.com_offset.copy(),
                       q_default=self.q_default.copy())

    def to_json(self) -> dict:
        out = {}
        for name in ("mass_ee", "pd_kp", "pd_kd", "force_limit", "base_mass",
                     "base_damping", "dt", "friction", "payload",
                     "motor_strength", "com_height", "action_scale"):
            out[name] = getattr(self, name)
        out["workspace"] = {"r_min": self.workspace.r_min,
                            "r_max": self.workspace.r_max}
        out["com_offset"] = self.com_offset.tolist()
        out["q_default"] = self.q_default.tolist()
        return out

    @staticmethod
    def from_json(d: dict) -> "PlantParams":
        d = dict(d)
        ws = d.pop("workspace", None)
        kwargs = dict(d)
        if ws is not None:
            kwargs["workspace"] = Workspace(ws["r_min"], ws["r_max"])
        return PlantParams(**kwargs)


# ---------------------------------------------------------------------------
# Environments


class EnvironmentModel:
    """Base class: force-free empty space.

    Subclasses override :meth:`contact_force` and, for stateful mechanisms,
    :meth:`advance`, which ``step`` calls once per tick with the post-step
    EE position and the contact force it just applied.
    """

    kind = "free_space"
    payload_mass = 0.0

    def contact_force(self, x_ee: Vec3, v_ee: Vec3, friction: float = 1.0) -> Vec3:
        return ZERO3.copy()

    def advance(self, x_ee: Vec3, f_contact: Vec3) -> None:
        pass

    def reset(self) -> None:
        pass

    def copy(self) -> "EnvironmentModel":
        return environment_from_spec(self.to_spec())

    def to_spec(self) -> dict:
        return {"kind": self.kind}


class FreeSpace(EnvironmentModel):
    pass


def _plane_contact(x: Vec3, v: Vec3, point: Vec3, normal: Vec3,
                   stiffness: float, damping: float, friction: float) -> Vec3:
    """Push-only spring-damper against the half-space behind ``point``.

    ``normal`` points out of the surface into free space. Zero force at zero
    penetration, never adhesive (the damper cannot pull the EE in while it
    is leaving).
    """
    s = float(np.dot(x - point, normal))
    if s >= 0.0:
        return ZERO3.copy()
    pen = -s
    sdot = float(np.dot(v, normal))
    mag = stiffness * pen - damping * friction * sdot
    if mag <= 0.0:
        return ZERO3.copy()
    return mag * normal


class Wall(EnvironmentModel):
    """Compliant plane: spring-damper along the outward normal, push-only."""

    kind = "wall"

    def __init__(self, point, normal, stiffness: float = 5000.0,
                 damping: float = 50.0):
        self.point = as_vec3(point)
        normal = as_vec3(normal)
        n = float(np.linalg.norm(normal))
        if not math.isfinite(n) or abs(n - 1.0) > 1e-9:
            raise ValueError("wall normal must be a unit vector")
        self.normal = normal
        if stiffness <= 0.0 or damping < 0.0:
            raise ValueError("wall stiffness must be > 0, damping >= 0")
        self.stiffness = float(stiffness)
        self.damping = float(damping)

    def contact_force(self, x_ee, v_ee, friction=1.0):
        return _plane_contact(x_ee, v_ee, self.point, self.normal,
                              self.stiffness, self.damping, friction)

    def penetration(self, x_ee) -> float:
        return max(0.0, -float(np.dot(x_ee - self.point, self.normal)))

    def surface_point(self) -> Vec3:
        return self.point

    def to_spec(self):
        return {"kind": self.kind, "point": self.point.tolist(),
                "normal": self.normal.tolist(), "stiffness": self.stiffness,
                "damping": self.damping}


class Payload(EnvironmentModel):
    """Unknown mass rigidly attached to the EE (a dumbbell in the gripper).

    Contributes weight and inertia through ``step``; the plant knows the
    mass but the estimator is not told, which is the point.
    """

    kind = "payload"

    def __init__(self, mass: float):
        if mass < 0.0:
            raise ValueError("payload mass must be non-negative")
        self.payload_mass = float(mass)

    def to_spec(self):
        return {"kind": self.kind, "mass": self.payload_mass}


class SpringLatch(EnvironmentModel):
    """Push-to-release latch: a wall that gives way and then springs open.

    State machine (monotone, advanced once per ``step``):

    * ``closed``: behaves like a wall at the nominal plane. Pressing with a
      normal force >= ``trigger_force`` trips it.
    * ``pressed``: the surface has given way by ``travel`` (plane shifts
      into the wall). Once the EE backs off (zero penetration), the latch
      releases.
    * ``sprung``: the mechanism has popped open; the surface now sits
      ``rebound`` proud of the nominal plane and stays there.
    """

    kind = "spring_latch"
    STATES = ("closed", "pressed", "sprung")

    def __init__(self, point, normal, stiffness: float = 5000.0,
                 damping: float = 50.0, trigger_force: float = 25.0,
                 travel: float = 0.02, rebound: float = 0.05,
                 state: str = "closed"):
        self.point = as_vec3(point)
        normal = as_vec3(normal)
        if abs(float(np.linalg.norm(normal)) - 1.0) > 1e-9:
            raise ValueError("latch normal must be a unit vector")
        self.normal = normal
        self.stiffness = float(stiffness)
        self.damping = float(damping)
        self.trigger_force = float(trigger_force)
        self.travel = float(travel)
        self.rebound = float(rebound)
        if state not in self.STATES:
            raise ValueError(f"unknown latch state {state!r}")
        self.state = state

    def surface_point(self) -> Vec3:
        # Nominal plane when closed, sunk by travel while pressed,
        # proud by rebound after springing open.
        if self.state == "pressed":
            return self.point - self.travel * self.normal
        if self.state == "sprung":
            return self.point + self.rebound * self.normal
        return self.point

    def contact_force(self, x_ee, v_ee, friction=1.0):
        return _plane_contact(x_ee, v_ee, self.surface_point(), self.normal,
                              self.stiffness, self.damping, friction)

    def penetration(self, x_ee) -> float:
        return max(0.0, -float(np.dot(x_ee - self.surface_point(),
                                      self.normal)))

    def advance(self, x_ee, f_contact):
        if self.state == "closed":
            if float(np.linalg.norm(f_contact)) >= self.trigger_force:
                self.state = "pressed"
        elif self.state == "pressed":
            # Release once the EE withdraws past the *nominal* plane (the
            # retreated surface sits deeper, so checking against it would
            # fire the instant the mechanism gives way).
            if float(np.dot(x_ee - self.point, self.normal)) >= 0.0:
                self.state = "sprung"

    def reset(self):
        self.state = "closed"

    def to_spec(self):
        return {"kind": self.kind, "point": self.point.tolist(),
                "normal": self.normal.tolist(), "stiffness": self.stiffness,
                "damping": self.damping, "trigger_force": self.trigger_force,
                "travel": self.travel, "rebound": self.rebound,
                "state": self.state}


# Optional spec keys fall back to the constructor defaults so hand-written
# specs (teleop reset_scene) stay short; to_spec always emits every key.
_ENV_KINDS = {
    "free_space": lambda d: FreeSpace(),
    "wall": lambda d: Wall(d["point"], d["normal"],
                           d.get("stiffness", 5000.0),
                           d.get("damping", 50.0)),
    "payload": lambda d: Payload(d["mass"]),
    "spring_latch": lambda d: SpringLatch(
        d["point"], d["normal"], d.get("stiffness", 5000.0),
        d.get("damping", 50.0), d.get("trigger_force", 25.0),
        d.get("travel", 0.02), d.get("rebound", 0.05),
        d.get("state", "closed")),
}


def environment_from_spec(spec: dict) -> EnvironmentModel:
    """Rebuild an environment from its ``to_spec`` dict (episode headers)."""
    kind = spec.get("kind")
    if kind not in _ENV_KINDS:
        raise ValueError(f"unknown environment kind {kind!r}")
    return _ENV_KINDS[kind](spec)


def contact_force(env: EnvironmentModel, x_ee: Vec3, v_ee: Vec3,
                  friction: float = 1.0) -> Vec3:
    """Force the environment applies to the EE at (x, v). Zero at zero
    penetration; never adhesive."""
    return env.contact_force(x_ee, v_ee, friction)


# ---------------------------------------------------------------------------
# State and dynamics


@dataclass
class PlantState:
    """Snapshot after a step.

    ``a_ee``, ``f_actuator`` and ``f_contact`` all describe the step that
    *produced* this state, so ``a_ee == (f_actuator + f_contact + f_ext +
    payload gravity)/effective mass`` holds by construction.
    """

    x_ee: Vec3
    v_ee: Vec3
    a_ee: Vec3
    v_base: Vec3      # (vx, vy, wz), body frame
    base_pose: Vec3   # (x, y, yaw), world frame
    f_actuator: Vec3
    f_contact: Vec3
    t: float

    def copy(self) -> "PlantState":
        return PlantState(*(getattr(self, f).copy() for f in
                            ("x_ee", "v_ee", "a_ee", "v_base", "base_pose",
                             "f_actuator", "f_contact")), t=self.t)

    def to_json(self) -> dict:
        return {
            "x_ee": self.x_ee.tolist(), "v_ee": self.v_ee.tolist(),
            "a_ee": self.a_ee.tolist(), "v_base": self.v_base.tolist(),
            "base_pose": self.base_pose.tolist(),
            "f_actuator": self.f_actuator.tolist(),
            "f_contact": self.f_contact.tolist(), "t": self.t,
        }

    @staticmethod
    def from_json(d: dict) -> "PlantState":
        return PlantState(
            as_vec3(d["x_ee"]), as_vec3(d["v_ee"]), as_vec3(d["a_ee"]),
            as_vec3(d["v_base"]), as_vec3(d["base_pose"]),
            as_vec3(d["f_actuator"]), as_vec3(d["f_contact"]), float(d["t"]))


def initial_state(params: PlantParams) -> PlantState:
    """EE parked at the default pose, everything at rest, t = 0."""
    return PlantState(x_ee=params.q_default.copy(), v_ee=vec3(), a_ee=vec3(),
                      v_base=vec3(), base_pose=vec3(), f_actuator=vec3(),
                      f_contact=vec3(), t=0.0)


def pd_actuator(x_target: Vec3, state: PlantState, params: PlantParams) -> Vec3:
    """Saturated PD force toward ``x_target`` (damping on absolute velocity)."""
    raw = params.pd_kp * (x_target - state.x_ee) - params.pd_kd * state.v_ee
    clipped = np.clip(raw, -params.force_limit, params.force_limit)
    return params.motor_strength * clipped


def action_to_target(action: Vec3, params: PlantParams) -> Vec3:
    """Map a normalized action in [-1, 1]^3 to an EE position target."""
    action = as_vec3(action)
    if np.any(np.abs(action) > 1.0 + 1e-9):
        raise ActionOutOfRange(f"action {action} outside [-1, 1]")
    return params.action_scale * action + params.q_default


def target_to_action(x_target: Vec3, params: PlantParams,
                     clip: bool = True) -> Vec3:
    """Inverse of :func:`action_to_target`; optionally clips to [-1, 1]."""
    a = (as_vec3(x_target) - params.q_default) / params.action_scale
    if clip:
        a = np.clip(a, -1.0, 1.0)
    return a


def step(state: PlantState, target, env: EnvironmentModel,
         f_ext: Vec3, params: PlantParams) -> PlantState:
    """Advance one fixed step of semi-implicit Euler.

    ``target`` is ``(x_target, v_base_target)``. ``f_ext`` is the external
    disturbance force on the EE for this step (held constant over the step).
    Stateful environments (the latch) advance at the end of the step using
    the contact force they just produced.

    The base is an ideal tracker: its velocity relaxes toward
    ``v_base_target`` first-order with time constant base_mass/base_damping
    and does not react to forces. Yaw rate uses the same lag.
    """
    x_target, v_base_target = target
    x_target = as_vec3(x_target)
    v_base_target = as_vec3(v_base_target)
    f_ext = as_vec3(f_ext)
    if not (np.all(np.isfinite(x_target)) and np.all(np.isfinite(v_base_target))
            and np.all(np.isfinite(f_ext))):
        raise NonFiniteState("non-finite step inputs")
    bound = 2.0 * params.workspace.r_max
    if float(np.linalg.norm(x_target)) > bound + 1e-9:
        raise TargetOutOfBounds(
            f"|x_target| = {float(np.linalg.norm(x_target)):.3f} m exceeds "
            f"2 * r_max = {bound:.3f} m")

    f_act = pd_actuator(x_target, state, params)
    f_cont = env.contact_force(state.x_ee, state.v_ee, params.friction)
    m_payload = params.payload + env.payload_mass
    m_eff = params.mass_ee + m_payload
    f_grav = vec3(0.0, 0.0, -m_payload * GRAVITY)
    f_net = f_act + f_cont + f_ext + f_grav

    a = f_net / m_eff
    v_new = state.v_ee + params.dt * a
    x_new = state.x_ee + params.dt * v_new

    # First-order velocity tracking for the base (vx, vy, wz all share the
    # base_mass/base_damping time constant).
    alpha = params.dt * params.base_damping / params.base_mass
    vb_new = state.v_base + alpha * (v_base_target - state.v_base)
    yaw = state.base_pose[2]
    c, s = math.cos(yaw), math.sin(yaw)
    pose_new = vec3(
        state.base_pose[0] + params.dt * (c * vb_new[0] - s * vb_new[1]),
        state.base_pose[1] + params.dt * (s * vb_new[0] + c * vb_new[1]),
        yaw + params.dt * vb_new[2])

    new = PlantState(x_ee=x_new, v_ee=v_new, a_ee=a, v_base=vb_new,
                     base_pose=pose_new, f_actuator=f_act, f_contact=f_cont,
                     t=state.t + params.dt)
    env.advance(x_new, f_cont)
    for arr in (new.x_ee, new.v_ee, new.a_ee, new.v_base, new.base_pose):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteState(f"non-finite state at t={new.t:.3f}")
    return new
