"""Episode files: newline-delimited JSON, one header line plus one line per
control tick.

The header pins everything a replay needs: plant parameters, the
environment snapshot at recording start, impedance constants, the active
control mode, and the estimate source. Frames record the inputs that drove
each tick (command, disturbances, mode) and the outputs worth auditing
(action, targets, post-step state, estimates). Floats round-trip exactly
through JSON (shortest-repr), which is what makes bit-exact replay
possible.

Files are written atomically (temp file + rename) and named
``<task>-<id>.episode.jsonl`` where ``id`` is the first 12 hex digits of
the SHA-256 of the content with the volatile fields (id, created) blanked,
so identical runs produce identical ids.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import List, Optional

from .control import CommandBundle, ControlMode, ImpedanceParams
from .plant import EnvironmentModel, PlantParams, PlantState, \
    environment_from_spec
from .rollout import TickLog

SCHEMA = "forcesim.episode/1"


class EpisodeFormatError(Exception):
    """File is not a well-formed episode."""


@dataclass
class EpisodeHeader:
    task: str
    seed: int
    dt: float
    plant: dict                  # PlantParams.to_json()
    env: dict                    # EnvironmentModel.to_spec() at start
    control: dict                # {"K": ..., "D": ...}
    mode: dict                   # ControlMode.to_json() at start
    estimate_source: str
    schema: str = SCHEMA
    id: str = ""                 # filled by write_episode
    created: str = ""            # ISO timestamp, excluded from the id hash
    notes: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"schema": self.schema, "id": self.id, "created": self.created,
                "task": self.task, "seed": self.seed, "dt": self.dt,
                "plant": self.plant, "env": self.env, "control": self.control,
                "mode": self.mode, "estimate_source": self.estimate_source,
                "notes": self.notes}

    @staticmethod
    def from_json(d: dict) -> "EpisodeHeader":
        if d.get("schema") != SCHEMA:
            raise EpisodeFormatError(
                f"unsupported episode schema {d.get('schema')!r}")
        return EpisodeHeader(
            task=d["task"], seed=int(d["seed"]), dt=float(d["dt"]),
            plant=d["plant"], env=d["env"], control=d["control"],
            mode=d["mode"], estimate_source=d["estimate_source"],
            schema=d["schema"], id=d.get("id", ""),
            created=d.get("created", ""), notes=d.get("notes", {}))


@dataclass
class Frame:
    t: float
    cmd: dict
    f_ee_ext: list
    f_base_ext: list
    mode: dict
    action: list
    x_target: list
    v_target: list
    state: dict
    est: dict
    est_truth: dict
    scene: Optional[list] = None
    reward: Optional[dict] = None

    def to_json(self) -> dict:
        out = {"t": self.t, "cmd": self.cmd, "f_ee_ext": self.f_ee_ext,
               "f_base_ext": self.f_base_ext, "mode": self.mode,
               "action": self.action, "x_target": self.x_target,
               "v_target": self.v_target, "state": self.state,
               "est": self.est, "est_truth": self.est_truth}
        if self.scene is not None:
            out["scene"] = self.scene
        if self.reward is not None:
            out["reward"] = self.reward
        return out

    @staticmethod
    def from_json(d: dict) -> "Frame":
        return Frame(t=float(d["t"]), cmd=d["cmd"], f_ee_ext=d["f_ee_ext"],
                     f_base_ext=d["f_base_ext"], mode=d["mode"],
                     action=d["action"], x_target=d["x_target"],
                     v_target=d["v_target"], state=d["state"],
                     est=d["est"], est_truth=d["est_truth"],
                     scene=d.get("scene"), reward=d.get("reward"))

    @staticmethod
    def from_ticklog(log: TickLog, reward: Optional[dict] = None) -> "Frame":
        return Frame(
            t=log.t, cmd=log.cmd.to_json(),
            f_ee_ext=log.f_ee_ext.tolist(),
            f_base_ext=log.f_base_ext.tolist(), mode=log.mode.to_json(),
            action=log.action.tolist(), x_target=log.x_target.tolist(),
            v_target=log.v_target.tolist(), state=log.state.to_json(),
            est=log.est.to_json(), est_truth=log.est_truth.to_json(),
            scene=log.scene, reward=reward)


@dataclass
class EpisodeRecord:
    header: EpisodeHeader
    frames: List[Frame]

    @staticmethod
    def from_session(session, logs: List[TickLog], task: str, seed: int,
                     rewards: Optional[List[dict]] = None,
                     env_start: Optional[dict] = None,
                     notes: Optional[dict] = None) -> "EpisodeRecord":
        """Package a finished run. ``env_start`` should be the environment
        snapshot taken *before* the first tick (stateful envs mutate)."""
        header = EpisodeHeader(
            task=task, seed=seed, dt=session.params.dt,
            plant=session.params.to_json(),
            env=env_start if env_start is not None else session.env.to_spec(),
            control={"K": session.controller.params.K,
                     "D": session.controller.params.D},
            mode=logs[0].mode.to_json() if logs else session.mode.to_json(),
            estimate_source=session.estimate_source,
            notes=notes or {})
        frames = [Frame.from_ticklog(
            log, reward=rewards[i] if rewards else None)
            for i, log in enumerate(logs)]
        return EpisodeRecord(header, frames)


def _serialize(record: EpisodeRecord) -> str:
    lines = [json.dumps(record.header.to_json(), sort_keys=True)]
    lines.extend(json.dumps(f.to_json(), sort_keys=True)
                 for f in record.frames)
    return "\n".join(lines) + "\n"


def episode_id(record: EpisodeRecord) -> str:
    """Content hash with the volatile header fields blanked."""
    header = record.header
    saved_id, saved_created = header.id, header.created
    header.id, header.created = "", ""
    try:
        digest = hashlib.sha256(_serialize(record).encode("utf-8"))
    finally:
        header.id, header.created = saved_id, saved_created
    return digest.hexdigest()[:12]


def write_episode(record: EpisodeRecord, out_dir, filename: str = None,
                  created: str = None) -> str:
    """Atomic write; returns the final path.

    ``created`` defaults to now (UTC); the FORCESIM_FIXED_CREATED
    environment variable pins it for byte-reproducible files.
    """
    if created is None:
        created = os.environ.get("FORCESIM_FIXED_CREATED") or \
            datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    record.header.created = created
    record.header.id = episode_id(record)
    os.makedirs(out_dir, exist_ok=True)
    if filename is None:
        safe_task = "".join(c if c.isalnum() or c in "-_" else "_"
                            for c in record.header.task) or "episode"
        filename = f"{safe_task}-{record.header.id}.episode.jsonl"
    final = os.path.join(out_dir, filename)
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(_serialize(record))
        os.replace(tmp, final)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return final


def read_episode(path) -> EpisodeRecord:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise EpisodeFormatError(f"{path}: empty file")
    try:
        header = EpisodeHeader.from_json(json.loads(lines[0]))
        frames = [Frame.from_json(json.loads(ln)) for ln in lines[1:]]
    except (json.JSONDecodeError, KeyError, ValueError) as e:
        raise EpisodeFormatError(f"{path}: {e}") from e
    # Frames must be one contiguous dt grid.
    for i in range(1, len(frames)):
        if abs(frames[i].t - frames[i - 1].t - header.dt) > 1e-9:
            raise EpisodeFormatError(
                f"{path}: frame {i} breaks the dt grid")
    return EpisodeRecord(header, frames)


def rebuild_session(header: EpisodeHeader, model=None):
    """Fresh SimSession matching an episode header (for replay)."""
    from .rollout import SimSession

    params = PlantParams.from_json(header.plant)
    env = environment_from_spec(header.env)
    control = ImpedanceParams(K=header.control["K"], D=header.control["D"])
    mode = ControlMode.from_json(header.mode)
    return SimSession(params=params, env=env, control=control, mode=mode,
                      estimate_source=header.estimate_source, model=model)


def replay_episode(record: EpisodeRecord, model=None) -> dict:
    """Re-run an episode from its recorded inputs and diff the states.

    Returns max absolute deviations over EE position/velocity and base
    velocity, plus the first frame index where EE position deviates by
    more than 1e-9 m (None when none do).
    """
    import numpy as np

    session = rebuild_session(record.header, model=model)
    max_dx = max_dv = max_dvb = 0.0
    first_div = None
    for i, frame in enumerate(record.frames):
        mode = ControlMode.from_json(frame.mode)
        if mode != session.mode:
            session.set_mode(mode)
        log = session.tick(CommandBundle.from_json(frame.cmd),
                           frame.f_ee_ext, frame.f_base_ext)
        ref = PlantState.from_json(frame.state)
        dx = float(np.max(np.abs(log.state.x_ee - ref.x_ee)))
        dv = float(np.max(np.abs(log.state.v_ee - ref.v_ee)))
        dvb = float(np.max(np.abs(log.state.v_base - ref.v_base)))
        max_dx, max_dv, max_dvb = (max(max_dx, dx), max(max_dv, dv),
                                   max(max_dvb, dvb))
        if first_div is None and dx > 1e-9:
            first_div = i
    return {"frames": len(record.frames), "max_dev_x_ee": max_dx,
            "max_dev_v_ee": max_dv, "max_dev_v_base": max_dvb,
            "first_divergence": first_div,
            "ok": first_div is None}
