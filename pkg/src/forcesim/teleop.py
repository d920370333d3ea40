"""Teleoperation service: the simulator behind a JSON message protocol.

The service is transport-agnostic. :class:`TeleopService` owns the
simulation session and consumes/produces plain dict messages;
``server.py`` pumps those dicts over a WebSocket. Keeping the protocol
logic here means every rule (lease arbitration, last-writer-wins
commands, recording lifecycle, error handling) is testable without a
socket in sight.

Protocol summary (the machine-readable contract lives in
``schema/teleop_protocol.schema.json``; field-by-field docs in the
README):

Client -> server, every message ``{"type": ..., "seq": n, ...}`` with a
per-client strictly increasing ``seq``:

- ``ping`` -> ``pong`` echoing the seq.
- ``acquire_lease`` / ``release_lease`` -> ``lease`` reply. A single
  client at a time holds the command lease (first come); only the holder
  may drive.
- ``set_command {cmd}`` -- full CommandBundle, last writer wins within a
  tick, zero-order-held until replaced.
- ``set_mode {mode}`` -- switch control mode (position, force_control,
  impedance, force_tracking, hybrid+tangent).
- ``set_disturbance {f_ee, f_base}`` -- held external force; this is how
  an operator "pushes" on the simulated robot.
- ``start_recording {task}`` / ``stop_recording`` -> ``recording_ack``.
  Starting resets the scene so the episode replays from its header
  snapshot; stopping writes the file and acks its content id.
- ``reset_scene {env, seed?}`` -- swap in a fresh environment spec.

Server -> client messages share one strictly increasing ``seq`` stream:
``state_update`` per tick (plant state, the estimate the controller
used, active targets, reward breakdown, recording status, lease holder),
plus ``pong`` / ``lease`` / ``recording_ack`` / ``error`` replies.
Replies carry ``echo_seq`` so clients can correlate.

Every client message is answered immediately or reflected in the next
``state_update``. Malformed input produces an ``error`` reply, never a
crash; the only way the loop dies is the plant going non-finite, which
emits a final ``error`` and marks the service dead.
"""

from __future__ import annotations

import os
from typing import Dict, List, Optional

import numpy as np

from .control import (CommandBundle, ControlMode, ImpedanceParams,
                      ModeCommandMismatch)
from .episodes import EpisodeRecord, write_episode
from .imitation import scene_vector
from .plant import (FreeSpace, NonFiniteState, PlantParams,
                    environment_from_spec)
from .rewards import compute_reward, reward_inputs_from_log
from .rollout import SimSession, TickLog

CLIENT_TYPES = ("ping", "acquire_lease", "release_lease", "set_command",
                "set_mode", "set_disturbance", "start_recording",
                "stop_recording", "reset_scene")

# Messages observers may send without holding the command lease.
LEASE_FREE = ("ping", "acquire_lease", "release_lease")


class ProtocolError(Exception):
    """Raised internally while validating a message; turned into an
    ``error`` reply, never propagated to the loop."""

    def __init__(self, code: str, text: str):
        super().__init__(text)
        self.code = code
        self.text = text


def _finite_vec3(value, what: str) -> list:
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ProtocolError("bad_message", f"{what} must be 3 numbers")
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise ProtocolError("bad_message",
                            f"{what} must be 3 finite numbers")
    return [float(v) for v in arr]


def _parse_command(d) -> CommandBundle:
    if not isinstance(d, dict):
        raise ProtocolError("bad_command", "cmd must be an object")
    fields = {}
    for key in ("v_base", "x_ee", "f_ee", "f_base"):
        if key not in d:
            raise ProtocolError("bad_command", f"cmd missing {key!r}")
        fields[key] = _finite_vec3(d[key], f"cmd.{key}")
    extra = set(d) - {"v_base", "x_ee", "f_ee", "f_base"}
    if extra:
        raise ProtocolError("bad_command",
                            f"cmd has unknown fields {sorted(extra)}")
    return CommandBundle(**fields)


def _parse_mode(d) -> ControlMode:
    if not isinstance(d, dict) or "kind" not in d:
        raise ProtocolError("bad_mode", "mode must be {kind, tangent?}")
    try:
        if "tangent" in d and d["tangent"] is not None:
            _finite_vec3(d["tangent"], "mode.tangent")
        return ControlMode.from_json(d)
    except (ValueError, KeyError) as e:
        raise ProtocolError("bad_mode", str(e))


class TeleopService:
    """Simulation tick owner plus protocol endpoint, queue-coupled.

    ``handle_message(client, msg)`` returns the immediate replies for
    that client; ``tick()`` advances the simulation one dt and returns
    the broadcast messages. The caller (a network server or a test)
    owns scheduling and delivery. No network state lives here.
    """

    def __init__(self, session: Optional[SimSession] = None,
                 out_dir: str = "episodes", seed: int = 0):
        self.session = session if session is not None else SimSession()
        self.out_dir = out_dir
        self.seed = int(seed)
        self.alive = True
        self.tick_index = 0
        self._server_seq = 0
        self._client_seq: Dict[str, int] = {}
        self.lease_holder: Optional[str] = None
        # Zero-order-held inputs, applied every tick until replaced.
        self._cmd = self._home_command()
        self._last_cmd_seq: Optional[int] = None
        self._f_ee_ext = [0.0, 0.0, 0.0]
        self._f_base_ext = [0.0, 0.0, 0.0]
        # Recording state.
        self._rec_logs: Optional[List[TickLog]] = None
        self._rec_rewards: Optional[List[dict]] = None
        self._rec_task = ""
        self._rec_env_start: Optional[dict] = None
        self._last_log: Optional[TickLog] = None
        self._last_reward: Optional[dict] = None

    # -- helpers -----------------------------------------------------------

    def _home_command(self) -> CommandBundle:
        home = self.session.params.q_default
        return CommandBundle(x_ee=home.copy())

    def _next_seq(self) -> int:
        self._server_seq += 1
        return self._server_seq

    def _error(self, code: str, text: str,
               echo_seq: Optional[int] = None) -> dict:
        return {"type": "error", "seq": self._next_seq(), "code": code,
                "text": text, "echo_seq": echo_seq}

    def _lease_reply(self, granted: bool, echo_seq: int) -> dict:
        return {"type": "lease", "seq": self._next_seq(),
                "granted": granted, "holder": self.lease_holder,
                "echo_seq": echo_seq}

    @property
    def recording(self) -> bool:
        return self._rec_logs is not None

    # -- message handling --------------------------------------------------

    def handle_message(self, client: str, msg) -> List[dict]:
        """Validate and apply one client message; returns the replies."""
        try:
            return self._dispatch(client, msg)
        except ProtocolError as e:
            seq = msg.get("seq") if isinstance(msg, dict) else None
            seq = seq if isinstance(seq, int) else None
            return [self._error(e.code, e.text, echo_seq=seq)]

    def _dispatch(self, client: str, msg) -> List[dict]:
        if not isinstance(msg, dict):
            raise ProtocolError("bad_message", "message must be an object")
        mtype = msg.get("type")
        if mtype not in CLIENT_TYPES:
            raise ProtocolError("bad_message",
                                f"unknown message type {mtype!r}")
        seq = msg.get("seq")
        if not isinstance(seq, int) or isinstance(seq, bool):
            raise ProtocolError("bad_message", "seq must be an integer")
        last = self._client_seq.get(client)
        if last is not None and seq <= last:
            raise ProtocolError(
                "bad_seq", f"seq {seq} not above previous {last}")
        self._client_seq[client] = seq

        if mtype == "ping":
            return [{"type": "pong", "seq": self._next_seq(),
                     "echo_seq": seq}]
        if mtype == "acquire_lease":
            if self.lease_holder is None or self.lease_holder == client:
                self.lease_holder = client
                return [self._lease_reply(True, seq)]
            return [self._lease_reply(False, seq)]
        if mtype == "release_lease":
            if self.lease_holder == client:
                self.lease_holder = None
            return [self._lease_reply(self.lease_holder == client, seq)]

        # Everything below drives the robot: lease required.
        if self.lease_holder != client:
            raise ProtocolError("no_lease",
                                "command lease not held by this client")

        if mtype == "set_command":
            self._cmd = _parse_command(msg.get("cmd"))
            self._last_cmd_seq = seq
            return []
        if mtype == "set_mode":
            mode = _parse_mode(msg.get("mode"))
            self.session.set_mode(mode)
            return []
        if mtype == "set_disturbance":
            f_ee = _finite_vec3(msg.get("f_ee", [0.0, 0.0, 0.0]), "f_ee")
            f_base = _finite_vec3(msg.get("f_base", [0.0, 0.0, 0.0]),
                                  "f_base")
            self._f_ee_ext, self._f_base_ext = f_ee, f_base
            return []
        if mtype == "start_recording":
            return [self._start_recording(msg, seq)]
        if mtype == "stop_recording":
            return [self._stop_recording(seq)]
        if mtype == "reset_scene":
            return self._reset_scene(msg, seq)
        raise ProtocolError("bad_message", f"unhandled type {mtype!r}")

    def client_gone(self, client: str) -> None:
        """Drop per-client state on disconnect; frees the lease."""
        if self.lease_holder == client:
            self.lease_holder = None
        self._client_seq.pop(client, None)

    # -- recording ---------------------------------------------------------

    def _start_recording(self, msg: dict, seq: int) -> dict:
        if self.recording:
            raise ProtocolError("recording_active",
                                "recording already active")
        task = msg.get("task")
        if not isinstance(task, str) or not task:
            raise ProtocolError("bad_message",
                                "start_recording needs a task label")
        # Reset to the scene the header will pin, so the file replays
        # from its own snapshot.
        self.session.reset()
        self._rec_logs, self._rec_rewards = [], []
        self._rec_task = task
        self._rec_env_start = self.session.env.to_spec()
        return {"type": "recording_ack", "seq": self._next_seq(),
                "recording": True, "episode_id": None, "path": None,
                "frames": 0, "echo_seq": seq}

    def _stop_recording(self, seq: int) -> dict:
        if not self.recording:
            raise ProtocolError("not_recording", "no recording active")
        logs, rewards = self._rec_logs, self._rec_rewards
        self._rec_logs = self._rec_rewards = None
        if not logs:
            raise ProtocolError("not_recording",
                                "recording stopped before any tick")
        record = EpisodeRecord.from_session(
            self.session, logs, task=self._rec_task, seed=self.seed,
            rewards=rewards, env_start=self._rec_env_start,
            notes={"source": "teleop"})
        try:
            path = write_episode(record, self.out_dir)
        except OSError as e:
            raise ProtocolError("storage", f"episode write failed: {e}")
        return {"type": "recording_ack", "seq": self._next_seq(),
                "recording": False, "episode_id": record.header.id,
                "path": path, "frames": len(record.frames),
                "echo_seq": seq}

    def _reset_scene(self, msg: dict, seq: int) -> List[dict]:
        if self.recording:
            raise ProtocolError("recording_active",
                                "stop recording before resetting")
        spec = msg.get("env", {"kind": "free_space"})
        try:
            env = environment_from_spec(spec) if spec is not None \
                else FreeSpace()
        except (ValueError, KeyError, TypeError) as e:
            raise ProtocolError("bad_env", f"bad environment spec: {e}")
        if "seed" in msg and msg["seed"] is not None:
            if not isinstance(msg["seed"], int) or isinstance(
                    msg["seed"], bool):
                raise ProtocolError("bad_message", "seed must be an integer")
            self.seed = msg["seed"]
        self.session.reset(env=env)
        self._cmd = self._home_command()
        self._last_cmd_seq = None
        self._f_ee_ext = [0.0, 0.0, 0.0]
        self._f_base_ext = [0.0, 0.0, 0.0]
        self._last_log = None
        self._last_reward = None
        return []

    # -- simulation tick ---------------------------------------------------

    def scene_features(self) -> Optional[list]:
        env = self.session.env
        if isinstance(env, FreeSpace):
            return None
        return scene_vector(env).tolist()

    def tick(self) -> List[dict]:
        """One dt of simulation; returns the broadcast messages."""
        if not self.alive:
            return []
        try:
            log = self.session.tick(self._cmd, self._f_ee_ext,
                                    self._f_base_ext,
                                    scene=self.scene_features())
        except ModeCommandMismatch as e:
            # Bad mode/command pairing from the driver: report, then keep
            # running on a safe hold command instead of dying.
            self._cmd = self._home_command()
            return [self._error("bad_command", str(e))]
        except NonFiniteState as e:
            self.alive = False
            return [self._error("nonfinite", str(e))]
        self.tick_index += 1
        reward = compute_reward(reward_inputs_from_log(log),
                                self.session.params,
                                self.session.controller.params.K,
                                self.session.controller.params.D)
        if self.recording:
            self._rec_logs.append(log)
            self._rec_rewards.append(reward)
        self._last_log, self._last_reward = log, reward
        return [self._state_update(log, reward)]

    def _state_update(self, log: TickLog, reward: dict) -> dict:
        return {
            "type": "state_update",
            "seq": self._next_seq(),
            "tick": self.tick_index,
            "t": log.state.t,
            "state": log.state.to_json(),
            "est": log.est.to_json(),
            "cmd": log.cmd.to_json(),
            "mode": log.mode.to_json(),
            "x_target": log.x_target.tolist(),
            "v_target": log.v_target.tolist(),
            "reward": reward,
            "env": self.session.env.to_spec(),
            "scene": log.scene,
            "recording": self.recording,
            "frames": len(self._rec_logs) if self.recording else 0,
            "lease_holder": self.lease_holder,
            "last_cmd_seq": self._last_cmd_seq,
        }


class Outbox:
    """Bounded per-client send queue: state updates drop oldest first
    under backpressure, replies and errors never drop."""

    def __init__(self, max_updates: int = 64):
        if max_updates < 1:
            raise ValueError("max_updates must be positive")
        self.max_updates = max_updates
        self._items: List[dict] = []
        self.dropped = 0

    def put(self, msg: dict) -> None:
        self._items.append(msg)
        n_updates = sum(1 for m in self._items
                        if m["type"] == "state_update")
        if n_updates > self.max_updates:
            for i, m in enumerate(self._items):
                if m["type"] == "state_update":
                    del self._items[i]
                    self.dropped += 1
                    break

    def drain(self) -> List[dict]:
        items, self._items = self._items, []
        return items

    def __len__(self) -> int:
        return len(self._items)
