"""Command and disturbance scheduling for excitation and evaluation runs.

Training-style excitation samples commands uniformly over fixed ranges:
EE position targets over a spherical shell around the shoulder, base
velocity over a planar box, force commands per axis. External disturbance
forces follow trapezoidal ramp-hold-release profiles so the plant sees both
transients and sustained loads; after the release the force stays at zero
for a quiet phase, then a fresh target is drawn and the cycle repeats.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .control import CommandBundle
from .plant import Vec3, vec3


@dataclass(frozen=True)
class CommandRanges:
    """Uniform sampling ranges for commanded targets.

    Angles are radians: ``theta`` is elevation from the horizontal plane,
    ``phi`` is azimuth from +x.
    """

    r: tuple = (0.35, 0.85)
    theta: tuple = (-0.4 * math.pi, 0.4 * math.pi)
    phi: tuple = (-0.6 * math.pi, 0.6 * math.pi)
    f_ee: tuple = (-60.0, 60.0)      # N, per axis
    f_base: tuple = (-60.0, 60.0)    # N, per axis (x, y only)
    v_x: tuple = (-0.8, 0.8)         # m/s
    v_y: tuple = (-0.6, 0.6)         # m/s
    w_z: tuple = (-0.8, 0.8)         # rad/s


def spherical_to_cartesian(r: float, theta: float, phi: float) -> Vec3:
    """(radius, elevation, azimuth) -> xyz."""
    ct = math.cos(theta)
    return vec3(r * ct * math.cos(phi), r * ct * math.sin(phi),
                r * math.sin(theta))


def sample_commands(rng: np.random.Generator,
                    ranges: CommandRanges = CommandRanges()) -> CommandBundle:
    """Draw one full command bundle uniformly over the ranges."""
    r = rng.uniform(*ranges.r)
    theta = rng.uniform(*ranges.theta)
    phi = rng.uniform(*ranges.phi)
    x_ee = spherical_to_cartesian(r, theta, phi)
    f_ee = rng.uniform(ranges.f_ee[0], ranges.f_ee[1], size=3)
    f_base = vec3(rng.uniform(*ranges.f_base), rng.uniform(*ranges.f_base),
                  0.0)
    v_base = vec3(rng.uniform(*ranges.v_x), rng.uniform(*ranges.v_y),
                  rng.uniform(*ranges.w_z))
    return CommandBundle(v_base=v_base, x_ee=x_ee, f_ee=f_ee, f_base=f_base)


@dataclass(frozen=True)
class CycleSchedule:
    """Trapezoid timing: ramp up, hold, ramp down, quiet. Seconds."""

    ramp_up: float = 1.0
    hold: float = 4.0
    ramp_down: float = 1.0
    quiet: float = 2.0

    def __post_init__(self):
        for name in ("ramp_up", "hold", "ramp_down", "quiet"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        if self.period <= 0.0:
            raise ValueError("cycle period must be positive")

    @property
    def period(self) -> float:
        return self.ramp_up + self.hold + self.ramp_down + self.quiet


@dataclass(frozen=True)
class ForceProfile:
    """One trapezoid cycle starting at ``t_start`` with peak ``target``."""

    target: Vec3
    t_start: float
    schedule: CycleSchedule = field(default_factory=CycleSchedule)


def force_profile_value(profile: ForceProfile, t: float) -> Vec3:
    """Profile force at absolute time ``t`` (zero outside the cycle)."""
    s = profile.schedule
    u = t - profile.t_start
    if u < 0.0 or u >= s.period:
        return vec3()
    if u < s.ramp_up:
        frac = u / s.ramp_up if s.ramp_up > 0.0 else 1.0
    elif u < s.ramp_up + s.hold:
        frac = 1.0
    elif u < s.ramp_up + s.hold + s.ramp_down:
        frac = 1.0 - (u - s.ramp_up - s.hold) / s.ramp_down
    else:
        frac = 0.0
    return frac * profile.target


def next_cycle(rng: np.random.Generator, lo: float, hi: float,
               t_start: float,
               schedule: CycleSchedule = CycleSchedule()) -> ForceProfile:
    """Draw the next trapezoid cycle: all three axes resample each cycle."""
    target = rng.uniform(lo, hi, size=3)
    return ForceProfile(target=target, t_start=t_start, schedule=schedule)


class DisturbanceStream:
    """Seedable stream of back-to-back trapezoid force cycles."""

    def __init__(self, seed: int, lo: float = -60.0, hi: float = 60.0,
                 schedule: CycleSchedule = CycleSchedule(),
                 planar: bool = False):
        self._rng = np.random.default_rng(seed)
        self._lo, self._hi = float(lo), float(hi)
        self._schedule = schedule
        self._planar = planar
        self._profile = next_cycle(self._rng, self._lo, self._hi, 0.0,
                                   schedule)
        self._flatten()

    def _flatten(self):
        if self._planar:
            target = self._profile.target.copy()
            target[2] = 0.0
            self._profile = ForceProfile(target, self._profile.t_start,
                                         self._profile.schedule)

    def value(self, t: float) -> Vec3:
        while t >= self._profile.t_start + self._schedule.period:
            self._profile = next_cycle(
                self._rng, self._lo, self._hi,
                self._profile.t_start + self._schedule.period,
                self._schedule)
            self._flatten()
        return force_profile_value(self._profile, t)


class CommandStream:
    """Seedable stream of command bundles, resampled on a fixed interval."""

    def __init__(self, seed: int, ranges: CommandRanges = CommandRanges(),
                 interval: float = 2.0):
        if interval <= 0.0:
            raise ValueError("resample interval must be positive")
        self._rng = np.random.default_rng(seed)
        self._ranges = ranges
        self._interval = float(interval)
        self._next_t = 0.0
        self._cmd = None

    def value(self, t: float) -> CommandBundle:
        while self._cmd is None or t >= self._next_t:
            self._cmd = sample_commands(self._rng, self._ranges)
            self._next_t += self._interval
        return self._cmd
