"""Unified force-position control for the end-effector and the base.

One law covers everything: the position target handed to the plant is the
commanded position plus the force error scaled by a virtual compliance,

    x_target = x_cmd + (F_net + F_cmd) / K

where ``F_net`` is the measured (or estimated) net force the environment
applies to the EE and ``F_cmd`` is the force the robot should be exerting.
With ``F_cmd = 0`` this is compliant position tracking: pushing the EE moves
it by F/K. Commanding a force against a surface shifts the target into the
surface until the reaction balances. The base uses the same trick on its
velocity target,

    v_target = v_cmd + (F_base_net + F_base_cmd) / D

applied to (vx, vy) only; yaw rate is never force-compensated.

The "modes" below are not different controllers, just different ways of
feeding the law:

* POSITION and IMPEDANCE zero the commanded forces (they are the same law;
  the two names reflect whether the operator is moving the setpoint or
  holding it and watching the displacement).
* FORCE_CONTROL passes the commanded forces through.
* FORCE_TRACKING additionally accumulates the commanded position each tick
  by F_net/K so the setpoint walks with sustained external force and stays
  put when the force disappears.
* HYBRID splits axes: position along a unit tangent, force in the
  orthogonal complement. Force commands with a component along the tangent
  are rejected (ModeCommandMismatch).

Mode switches are discrete; FORCE_TRACKING re-seeds its accumulator from the
commanded position at the first tick after entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from .plant import Vec3, as_vec3, vec3


class ModeCommandMismatch(Exception):
    """Command incompatible with the active mode (hybrid tangent force)."""


# Per-tick blend for the stateful controller's compensation smoother (see
# UnifiedController). 1.0 disables smoothing entirely.
FORCE_FILTER_ALPHA = 0.01


class ModeKind(str, Enum):
    POSITION = "position"
    FORCE_CONTROL = "force_control"
    IMPEDANCE = "impedance"
    FORCE_TRACKING = "force_tracking"
    HYBRID = "hybrid"


@dataclass(frozen=True, eq=False)
class ControlMode:
    """Mode tag; HYBRID carries its unit tangent direction."""

    kind: ModeKind
    tangent: Optional[Vec3] = None

    def __eq__(self, other):
        if not isinstance(other, ControlMode):
            return NotImplemented
        if self.kind != other.kind:
            return False
        if self.tangent is None or other.tangent is None:
            return self.tangent is None and other.tangent is None
        return bool(np.array_equal(self.tangent, other.tangent))

    def __post_init__(self):
        if self.kind == ModeKind.HYBRID:
            if self.tangent is None:
                raise ValueError("hybrid mode needs a tangent direction")
            t = as_vec3(self.tangent)
            if abs(float(np.linalg.norm(t)) - 1.0) > 1e-9:
                raise ValueError("hybrid tangent must be a unit vector")
            object.__setattr__(self, "tangent", t)
        elif self.tangent is not None:
            raise ValueError(f"{self.kind.value} mode takes no tangent")

    @staticmethod
    def position() -> "ControlMode":
        return ControlMode(ModeKind.POSITION)

    @staticmethod
    def force_control() -> "ControlMode":
        return ControlMode(ModeKind.FORCE_CONTROL)

    @staticmethod
    def impedance() -> "ControlMode":
        return ControlMode(ModeKind.IMPEDANCE)

    @staticmethod
    def force_tracking() -> "ControlMode":
        return ControlMode(ModeKind.FORCE_TRACKING)

    @staticmethod
    def hybrid(tangent) -> "ControlMode":
        return ControlMode(ModeKind.HYBRID, as_vec3(tangent))

    def to_json(self) -> dict:
        out = {"kind": self.kind.value}
        if self.tangent is not None:
            out["tangent"] = self.tangent.tolist()
        return out

    @staticmethod
    def from_json(d: dict) -> "ControlMode":
        kind = ModeKind(d["kind"])
        if kind == ModeKind.HYBRID:
            return ControlMode.hybrid(d["tangent"])
        return ControlMode(kind)


@dataclass
class ImpedanceParams:
    """Virtual compliance constants shared by all modes."""

    K: float = 100.0  # N/m, EE force-to-displacement
    D: float = 75.0   # N s/m, base force-to-velocity

    def __post_init__(self):
        if self.K <= 0.0 or self.D <= 0.0:
            raise ValueError("K and D must be positive")


@dataclass
class CommandBundle:
    """Operator/policy commands, last-writer-wins per channel.

    ``v_base`` is (vx, vy, wz); forces are world/body-frame newtons on the
    EE and base respectively.
    """

    v_base: Vec3 = field(default_factory=vec3)
    x_ee: Vec3 = field(default_factory=vec3)
    f_ee: Vec3 = field(default_factory=vec3)
    f_base: Vec3 = field(default_factory=vec3)

    def __post_init__(self):
        self.v_base = as_vec3(self.v_base)
        self.x_ee = as_vec3(self.x_ee)
        self.f_ee = as_vec3(self.f_ee)
        self.f_base = as_vec3(self.f_base)

    @staticmethod
    def zero() -> "CommandBundle":
        return CommandBundle()

    def copy(self) -> "CommandBundle":
        return CommandBundle(self.v_base.copy(), self.x_ee.copy(),
                             self.f_ee.copy(), self.f_base.copy())

    def as_vector(self) -> np.ndarray:
        """Flatten to 12 floats in (v_base, x_ee, f_ee, f_base) order."""
        return np.concatenate([self.v_base, self.x_ee, self.f_ee,
                               self.f_base])

    @staticmethod
    def from_vector(v) -> "CommandBundle":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (12,):
            raise ValueError(f"expected 12 command values, got {v.shape}")
        return CommandBundle(v[0:3], v[3:6], v[6:9], v[9:12])

    def to_json(self) -> dict:
        return {"v_base": self.v_base.tolist(), "x_ee": self.x_ee.tolist(),
                "f_ee": self.f_ee.tolist(), "f_base": self.f_base.tolist()}

    @staticmethod
    def from_json(d: dict) -> "CommandBundle":
        return CommandBundle(d["v_base"], d["x_ee"], d["f_ee"], d["f_base"])


def compute_ee_target(x_cmd: Vec3, f_cmd: Vec3, f_net: Vec3,
                      K: float) -> Vec3:
    """Core law: shift the position target by the force error over K."""
    return as_vec3(x_cmd) + (as_vec3(f_net) + as_vec3(f_cmd)) / K


def compute_base_target(v_cmd: Vec3, f_base_cmd: Vec3, f_base_net: Vec3,
                        D: float) -> Vec3:
    """Base analog on (vx, vy); wz passes through untouched."""
    v_cmd = as_vec3(v_cmd)
    comp = (as_vec3(f_base_net) + as_vec3(f_base_cmd)) / D
    return vec3(v_cmd[0] + comp[0], v_cmd[1] + comp[1], v_cmd[2])


def force_tracking_update(x_cmd_acc: Vec3, f_net: Vec3, K: float) -> Vec3:
    """One tick of setpoint accumulation: the commanded position walks by
    F_net/K so sustained force drags the setpoint along."""
    return as_vec3(x_cmd_acc) + as_vec3(f_net) / K


def validate_command(mode: ControlMode, cmd: CommandBundle) -> None:
    """Reject mode/command pairings with no consistent reading.

    Depends on nothing but the pair itself, so callers that mutate state
    per tick (history buffers, accumulators) can check before touching
    anything.
    """
    if mode.kind == ModeKind.HYBRID:
        f_along = float(np.dot(mode.tangent, cmd.f_ee))
        if abs(f_along) > 1e-6:
            raise ModeCommandMismatch(
                f"hybrid force command has {f_along:.2e} N along the "
                "position tangent")


def resolve(mode: ControlMode, cmd: CommandBundle, f_ee_net: Vec3,
            f_base_net: Vec3, params: ImpedanceParams,
            ft_cmd: Optional[Vec3]) -> Tuple[Vec3, Vec3, Optional[Vec3]]:
    """Pure mode dispatch.

    Returns ``(x_target, v_base_target, new_ft_cmd)`` where ``ft_cmd`` is
    the force-tracking setpoint accumulator (None outside that mode).
    """
    f_ee_net = as_vec3(f_ee_net)
    f_base_net = as_vec3(f_base_net)
    kind = mode.kind

    if kind in (ModeKind.POSITION, ModeKind.IMPEDANCE):
        x_t = compute_ee_target(cmd.x_ee, vec3(), f_ee_net, params.K)
        v_t = compute_base_target(cmd.v_base, vec3(), f_base_net, params.D)
        return x_t, v_t, None

    if kind == ModeKind.FORCE_CONTROL:
        x_t = compute_ee_target(cmd.x_ee, cmd.f_ee, f_ee_net, params.K)
        v_t = compute_base_target(cmd.v_base, cmd.f_base, f_base_net,
                                  params.D)
        return x_t, v_t, None

    if kind == ModeKind.FORCE_TRACKING:
        # The walking setpoint IS the target; adding the instantaneous
        # compensation on top would snap the EE back when the force
        # disappears instead of leaving it displaced.
        acc = cmd.x_ee.copy() if ft_cmd is None else ft_cmd
        acc = force_tracking_update(acc, f_ee_net, params.K)
        x_t = acc.copy()
        v_t = compute_base_target(cmd.v_base, cmd.f_base, f_base_net,
                                  params.D)
        return x_t, v_t, acc

    if kind == ModeKind.HYBRID:
        validate_command(mode, cmd)
        tangent = mode.tangent
        p_t = np.outer(tangent, tangent)
        p_n = np.eye(3) - p_t
        # Position law along the tangent, force law in the complement.
        comp = p_n @ (f_ee_net + cmd.f_ee) / params.K
        x_t = cmd.x_ee + comp
        v_t = compute_base_target(cmd.v_base, cmd.f_base, f_base_net,
                                  params.D)
        return x_t, v_t, None

    raise ValueError(f"unhandled mode {kind}")


class UnifiedController:
    """Stateful wrapper: holds the active mode, the force-tracking
    accumulator, and the compensation smoother.

    The smoother exists because the raw per-tick law is an admittance
    loop: against a stiff contact (wall spring ~50x the virtual
    stiffness K) the one-tick-latent force feedback makes the bare loop
    oscillate instead of settling. Filtering the *sum* of measured and
    commanded force keeps matched command/disturbance pairs cancelling
    exactly while the loop gain seen by the contact drops below one.
    Steady-state equilibria are unchanged. The smoother starts from
    zero, so commanded forces ramp in over a few time constants instead
    of yanking the target; force tracking integrates the raw
    measurement (its accumulator is already a smoother).
    """

    def __init__(self, mode: ControlMode = None,
                 params: ImpedanceParams = None,
                 filter_alpha: float = FORCE_FILTER_ALPHA):
        if not 0.0 < filter_alpha <= 1.0:
            raise ValueError(f"filter_alpha must be in (0, 1], got "
                             f"{filter_alpha}")
        self.mode = mode if mode is not None else ControlMode.position()
        self.params = params if params is not None else ImpedanceParams()
        self.filter_alpha = filter_alpha
        self._ft_cmd: Optional[Vec3] = None
        self._f_bar: Optional[Vec3] = None

    def set_mode(self, mode: ControlMode) -> None:
        if mode != self.mode:
            self._ft_cmd = None
        self.mode = mode

    def reset_accumulator(self) -> None:
        self._ft_cmd = None

    def reset(self) -> None:
        self._ft_cmd = None
        self._f_bar = None

    def _active_f_cmd(self, cmd: CommandBundle) -> Vec3:
        if self.mode.kind in (ModeKind.FORCE_CONTROL, ModeKind.HYBRID):
            return cmd.f_ee
        return vec3()

    def resolve(self, cmd: CommandBundle, f_ee_net: Vec3,
                f_base_net: Vec3) -> Tuple[Vec3, Vec3]:
        f_ee_net = as_vec3(f_ee_net)
        f_cmd = self._active_f_cmd(cmd)
        joint = f_ee_net + f_cmd
        if self._f_bar is None:
            self._f_bar = vec3()
        self._f_bar = self._f_bar + self.filter_alpha * (joint
                                                         - self._f_bar)
        if self.mode.kind in (ModeKind.FORCE_CONTROL, ModeKind.IMPEDANCE,
                              ModeKind.HYBRID):
            f_ee_used = self._f_bar - f_cmd
        else:
            f_ee_used = f_ee_net
        x_t, v_t, self._ft_cmd = resolve(self.mode, cmd, f_ee_used,
                                         f_base_net, self.params,
                                         self._ft_cmd)
        return x_t, v_t
