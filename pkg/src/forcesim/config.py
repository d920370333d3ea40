"""Run configuration and manifests.

One flat config object covers every subcommand; a YAML file can override
any field, and the environment variables FORCESIM_OUT / FORCESIM_BIND /
FORCESIM_PORT override the file (CLI flags outrank everything, handled
in cli.py). Every run writes a RunManifest JSON next to its outputs with
the fully resolved config, so a run can be reproduced from the manifest
alone (``--from-manifest``).
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional

import yaml

from . import __version__


@dataclass
class Config:
    # Shared
    out_dir: str = "runs"
    seed: int = 0
    # Teleop server
    bind: str = "127.0.0.1"
    port: int = 8765
    rate: float = 50.0
    ui_root: str = ""
    # Tracking eval
    track_steps: int = 6000
    track_seeds: int = 1
    # Force sweep
    force_levels: List[float] = field(
        default_factory=lambda: [0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0])
    force_hold_s: float = 6.0
    # Estimator data + training
    est_train_episodes: int = 1000
    est_val_episodes: int = 80
    est_ticks: int = 400
    est_hidden: List[int] = field(default_factory=lambda: [192, 192])
    est_steps: int = 24000
    est_batch: int = 512
    est_lr: float = 1.5e-3
    est_lr_final: float = 1e-4
    est_optimizer: str = "adam"
    est_weight_decay: float = 0.0
    # Behavior cloning / ablation
    bc_hidden: List[int] = field(default_factory=lambda: [128, 128])
    bc_steps: int = 20000
    bc_batch: int = 128
    bc_lr: float = 1e-3
    bc_optimizer: str = "adam"
    wipe_demos: int = 50
    latch_demos: int = 30
    bc_trials: int = 50

    def resolved(self) -> dict:
        return asdict(self)


def _coerce(value, target):
    """YAML gives strings/ints; coerce to the dataclass field's type."""
    if isinstance(target, bool):
        return bool(value)
    if isinstance(target, int):
        return int(value)
    if isinstance(target, float):
        return float(value)
    if isinstance(target, list):
        return list(value)
    return value


def load_config(path: Optional[str] = None) -> Config:
    """Defaults, then YAML file, then environment overrides."""
    cfg = Config()
    if path:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ValueError(f"{path}: config must be a mapping")
        known = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
        for key, value in data.items():
            if key not in known:
                raise ValueError(f"{path}: unknown config key {key!r}")
            setattr(cfg, key, _coerce(value, known[key]))
    if os.environ.get("FORCESIM_OUT"):
        cfg.out_dir = os.environ["FORCESIM_OUT"]
    if os.environ.get("FORCESIM_BIND"):
        cfg.bind = os.environ["FORCESIM_BIND"]
    if os.environ.get("FORCESIM_PORT"):
        cfg.port = int(os.environ["FORCESIM_PORT"])
    return cfg


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int
    version: str
    outputs: List[str]
    wall_clock_s: float
    argv: List[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


class ManifestWriter:
    """Collects output paths during a run; writes the manifest at the end.

    Use as a context manager; the manifest lands next to the first output
    (or in out_dir when the run produced none).
    """

    def __init__(self, subcommand: str, cfg: Config, argv: List[str]):
        self.subcommand = subcommand
        self.cfg = cfg
        self.argv = list(argv)
        self.outputs: List[str] = []
        self._t0 = time.time()
        self.path: Optional[str] = None

    def add(self, path: str) -> str:
        self.outputs.append(os.path.abspath(path))
        return path

    def write(self) -> str:
        manifest = RunManifest(
            subcommand=self.subcommand, config=self.cfg.resolved(),
            seed=self.cfg.seed, version=__version__,
            outputs=self.outputs, wall_clock_s=time.time() - self._t0,
            argv=self.argv)
        where = os.path.dirname(self.outputs[0]) if self.outputs \
            else self.cfg.out_dir
        os.makedirs(where, exist_ok=True)
        self.path = os.path.join(
            where, f"{self.subcommand.replace('-', '_')}_manifest.json")
        with open(self.path, "w") as fh:
            json.dump(manifest.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return self.path

    def __enter__(self) -> "ManifestWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            self.write()


def config_from_manifest(path: str) -> Config:
    """Rebuild the exact Config a manifest ran with."""
    with open(path) as fh:
        data = json.load(fh)
    cfg = Config()
    known = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for key, value in data.get("config", {}).items():
        if key in known:
            setattr(cfg, key, _coerce(value, known[key]))
    return cfg
