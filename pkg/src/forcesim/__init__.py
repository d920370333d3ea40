"""forcesim: desk-scale simulator and tooling for unified force-position control.

The package simulates a single Cartesian end-effector riding on a planar
mobile base, exposes the unified force-position control law for both, a
sensorless external-force estimator (exact model-inversion oracle plus a
trainable regressor), a command scheduler for excitation, reward/domain
randomization utilities, a teleoperation service speaking JSON over
WebSocket, an episode recorder with bit-exact replay, and a behavior-cloning
pipeline used for the force-aware vs position-only ablation.
"""

__version__ = "0.1.0"

from .plant import PlantParams, PlantState, step, initial_state  # noqa: F401
from .control import (  # noqa: F401
    CommandBundle,
    ControlMode,
    ImpedanceParams,
    UnifiedController,
)
