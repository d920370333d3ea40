"""The pass/fail gate for the whole artifact.

``run_all`` executes ten numbered checks covering tracking, estimation,
force control, the mode demos, base compensation, rewards, training
gradients, determinism and the imitation ablation, printing one line per
criterion. The test suite runs the same functions, so `forcesim
acceptance` and `pytest tests/test_acceptance.py` cannot drift apart.

The heavyweight criteria (estimator training, the BC ablation) run the
real pipelines at full scale; expect the suite to take tens of minutes
of CPU. Thresholds are pinned here as literals on purpose: changing one
should look like changing a contract, not tuning a config.
"""

from __future__ import annotations

import io
import os
import time
from contextlib import redirect_stdout
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .config import Config


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.number:2d}. {self.name}: {self.detail} "
                f"[{self.seconds:.1f} s]")


def _result(number: int, name: str, fn: Callable[[], tuple],
            announce: Callable[[str], None]) -> CriterionResult:
    t0 = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as exc:  # a crash is a failure with the traceback head
        passed, detail = False, f"{type(exc).__name__}: {exc}"
    res = CriterionResult(number, name, bool(passed), detail,
                          time.perf_counter() - t0)
    announce(res.line())
    return res


# ---------------------------------------------------------------------------
# Individual criteria. Each returns (passed, detail).


def check_position_tracking(seed: int = 0) -> tuple:
    """6000 random-target steps: <0.01 m on every axis for >=95% of
    steady windows, simulated in under 30 s."""
    from .scenarios import position_tracking

    t0 = time.perf_counter()
    logs, m = position_tracking(steps=6000, seed=seed)
    elapsed = time.perf_counter() - t0
    frac = m["frac_windows_under_1cm"]
    ok = frac >= 0.95 and elapsed < 30.0
    return ok, (f"{frac * 100:.1f}% of {m['windows']} windows under 0.01 m "
                f"(need 95%), {elapsed:.1f} s (limit 30)")


def check_estimator(cfg: Config, out_dir: Optional[str] = None) -> tuple:
    """Full training run: held-out x_ee RMS < 0.02 m and f_ee RMS < 5 N
    per axis, oracle < 0.1 N, trained and evaluated inside 10 minutes.
    Corpus generation happens outside the timed window."""
    from .datagen import SynthesisConfig, build_dataset
    from .estimator import (RegressorModel, evaluate_estimator,
                            train_regressor, write_eval_csv)

    train_cfg = SynthesisConfig(episodes=cfg.est_train_episodes,
                                ticks=cfg.est_ticks, seed=cfg.seed)
    val_cfg = SynthesisConfig(episodes=cfg.est_val_episodes,
                              ticks=cfg.est_ticks, seed=cfg.seed + 1)
    train_set, _, _ = build_dataset(train_cfg)
    val_set, _, _ = build_dataset(val_cfg)

    t0 = time.perf_counter()
    model = RegressorModel.fresh(hidden=tuple(cfg.est_hidden), seed=cfg.seed)
    model, _ = train_regressor(
        model=model, dataset=train_set, steps=cfg.est_steps,
        batch=cfg.est_batch, lr=cfg.est_lr, lr_final=cfg.est_lr_final,
        optimizer=cfg.est_optimizer, weight_decay=cfg.est_weight_decay,
        seed=cfg.seed)
    ev = evaluate_estimator(model, val_set)
    elapsed = time.perf_counter() - t0

    if out_dir:
        model.save(os.path.join(out_dir, "estimator.bin"))
        write_eval_csv(ev, os.path.join(out_dir, "estimator_eval.csv"))

    f_rms = [ev["rms"][f"f_ee_{ax}"] for ax in "xyz"]
    x_rms = [ev["rms"][f"x_ee_{ax}"] for ax in "xyz"]
    o_rms = [ev["oracle_rms"][f"f_ee_{ax}"] for ax in "xyz"]
    ok = (max(f_rms) < 5.0 and max(x_rms) < 0.02 and max(o_rms) < 0.1
          and elapsed < 600.0)
    return ok, (f"f_ee rms {['%.2f' % v for v in f_rms]} N (need <5), "
                f"x_ee rms {['%.4f' % v for v in x_rms]} m (need <0.02), "
                f"oracle {max(o_rms):.2e} N, {elapsed:.0f} s (limit 600)")


def check_matched_force(seed: int = 0) -> tuple:
    """Scheduler disturbances with matching force commands: <0.02 m for
    >=90% of windows."""
    from .scenarios import matched_force_tracking

    logs, m = matched_force_tracking(steps=6000, seed=seed)
    frac = m["frac_windows_under_2cm"]
    return frac >= 0.90, (f"{frac * 100:.1f}% of {m['windows']} windows "
                          f"under 0.02 m (need 90%)")


def check_force_sweep() -> tuple:
    """10..60 N presses achieve within 5% at every level; zero command
    leaves under 0.5 N on the wall."""
    from .scenarios import force_sweep

    logs, m = force_sweep()
    worst = m["worst_pct_error"]
    zero = m["zero_level_achieved"]
    ok = worst is not None and worst <= 5.0 and zero is not None \
        and zero < 0.5
    return ok, (f"worst level error {worst:.2f}% (need <=5), "
                f"zero-command residual {zero:.3f} N (need <0.5)")


def check_mode_properties() -> tuple:
    """Impedance displacement within 2% of F/K; force-tracking drift
    under 0.01 m over 5 s; payload z-error under 0.02 m; hybrid holds
    both tangential tracking and 30 N normal force."""
    from .scenarios import (force_tracking_demo, hybrid_demo, impedance_demo,
                            payload_demo)

    _, imp = impedance_demo()
    _, ft = force_tracking_demo()
    _, pay = payload_demo()
    _, hyb = hybrid_demo()
    parts = [
        (imp["worst_pct_error"] <= 2.0,
         f"impedance {imp['worst_pct_error']:.2f}%<=2"),
        (ft["drift_after_release_m"] < 0.01,
         f"drift {ft['drift_after_release_m']:.4f}<0.01"),
        (pay["abs_z_error_m"] < 0.02,
         f"payload z {pay['abs_z_error_m']:.4f}<0.02"),
        (hyb["max_tangential_error_m"] < 0.02,
         f"hybrid tan {hyb['max_tangential_error_m']:.4f}<0.02"),
        (hyb["worst_normal_pct"] <= 5.0,
         f"hybrid normal {hyb['worst_normal_pct']:.2f}%<=5"),
    ]
    return all(p for p, _ in parts), ", ".join(d for _, d in parts)


def check_base_compensation() -> tuple:
    """Halt: commanded walk nulled by -v*D force to under 0.05 m/s.
    Kick: 30 N push on a halted base yields within 10% of 30/D."""
    from .scenarios import base_halt_demo, base_kick_demo

    _, halt = base_halt_demo()
    _, kick = base_kick_demo()
    ok = halt["tail_speed"] < 0.05 and kick["pct_error"] <= 10.0
    return ok, (f"halt speed {halt['tail_speed']:.4f} m/s (need <0.05), "
                f"kick error {kick['pct_error']:.2f}% (need <=10)")


def check_rewards() -> tuple:
    """Reward table literals, randomization ranges, and argmax agreement
    between the unified-position reward and the control law."""
    from .control import compute_ee_target
    from .plant import PlantParams, vec3
    from .rewards import (RandomizationRanges, RewardConfig, RewardInputs,
                          reward_gripper_position)

    rcfg = RewardConfig()
    expected_weights = {
        "w_gripper_position": 2.0, "scale_gripper_position": 0.5,
        "w_base_velocity": 2.0, "scale_base_velocity": 0.25,
        "w_collision": -5.0, "w_joint_limit": -10.0,
        "joint_limit_fraction": 0.8, "w_torques": -5e-6,
        "w_joint_velocities": -8e-4, "w_joint_accelerations": -2e-7,
        "w_action_rate": -0.02, "w_torque_limit": -0.005,
        "torque_limit_fraction": 0.9, "w_contact_number": 2.0,
        "w_reference_motion": 1.0, "contact_force_threshold": 5.0,
    }
    for key, val in expected_weights.items():
        if getattr(rcfg, key) != val:
            return False, f"{key} = {getattr(rcfg, key)} != {val}"
    ranges = RandomizationRanges()
    expected_ranges = {
        "friction": (0.3, 2.0), "body_mass": (0.0, 15.0),
        "base_com": (-0.15, 0.15), "motor_strength": (0.85, 1.15),
        "gripper_payload": (0.0, 0.5), "push_velocity": (0.0, 0.8),
    }
    for key, val in expected_ranges.items():
        if tuple(getattr(ranges, key)) != val:
            return False, f"range {key} = {getattr(ranges, key)} != {val}"
    if ranges.push_interval != 8.0:
        return False, f"push_interval = {ranges.push_interval} != 8.0"

    # The position reward must peak where the control law puts the
    # target: over a grid of candidate EE positions, the reward argmax
    # has to be the grid point nearest compute_ee_target's answer.
    params = PlantParams()
    x_cmd = vec3(0.45, 0.1, -0.2)
    f_cmd = vec3(10.0, -5.0, 0.0)
    f_net = vec3(-4.0, 2.0, 8.0)
    K = 100.0
    target = compute_ee_target(x_cmd, f_cmd, f_net, K)
    grid = np.linspace(-0.3, 0.3, 31)
    zero = vec3()
    best_x, best_r = None, -np.inf
    nearest_x, nearest_d = None, np.inf
    for dx in grid:
        for dy in grid:
            for dz in grid:
                x = x_cmd + vec3(dx, dy, dz)
                inp = RewardInputs(
                    x_ee=x, v_ee=zero, a_ee=zero, v_base=zero,
                    f_actuator=zero, f_contact=zero, action=zero,
                    action_prev=zero, x_cmd=x_cmd, f_ee_cmd=f_cmd,
                    v_base_cmd=zero, f_base_cmd=zero, f_ee_net=f_net,
                    f_base_net=zero)
                r = reward_gripper_position(inp, params, K, rcfg)
                if r > best_r:
                    best_r, best_x = r, x
                d = float(np.linalg.norm(x - target))
                if d < nearest_d:
                    nearest_d, nearest_x = d, x
    if not np.allclose(best_x, nearest_x, atol=1e-12):
        return False, (f"reward argmax {best_x} is not the grid point "
                       f"nearest the control target {target}")
    return True, ("16 reward constants, 7 randomization ranges, "
                  "argmax on a 31^3 grid agrees with the control law")


def check_gradients() -> tuple:
    """Analytic MSE gradients match central finite differences to 1e-4
    relative on small random models."""
    from .mlp import MLP, mse_loss_and_grads

    rng = np.random.default_rng(3)
    worst = 0.0
    for sizes in ([5, 8, 4], [7, 6, 6, 2]):
        mlp = MLP(sizes, seed=11)
        X = rng.normal(size=(6, sizes[0]))
        Y = rng.normal(size=(6, sizes[-1]))
        _, gw, gb = mse_loss_and_grads(mlp, X, Y)
        eps = 1e-6
        for li in range(len(mlp.weights)):
            for arr, grad in ((mlp.weights[li], gw[li]),
                              (mlp.biases[li], gb[li])):
                flat = arr.reshape(-1)
                idx = rng.integers(0, flat.size, size=min(10, flat.size))
                for j in idx:
                    keep = flat[j]
                    flat[j] = keep + eps
                    lp, _, _ = mse_loss_and_grads(mlp, X, Y)
                    flat[j] = keep - eps
                    lm, _, _ = mse_loss_and_grads(mlp, X, Y)
                    flat[j] = keep
                    fd = (lp - lm) / (2 * eps)
                    a = grad.reshape(-1)[j]
                    rel = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
                    worst = max(worst, rel)
    return worst < 1e-4, f"worst relative gradient error {worst:.2e}"


GOLDEN_EPISODE = os.path.join(os.path.dirname(__file__), os.pardir,
                              os.pardir, "tests", "data",
                              "golden.episode.jsonl")


def check_replay_determinism(cfg: Config,
                             out_dir: Optional[str] = None) -> tuple:
    """The shipped golden episode replays bit-clean, and a CSV produced
    twice with the same seed is byte-identical."""
    from .cli import main as cli_main
    from .episodes import read_episode, replay_episode

    path = os.environ.get("FORCESIM_GOLDEN", GOLDEN_EPISODE)
    if not os.path.isfile(path):
        return False, f"golden episode missing at {path}"
    rep = replay_episode(read_episode(path))
    if not rep["ok"]:
        return False, (f"golden replay deviates "
                       f"{rep['max_dev_x_ee']:.2e} m at frame "
                       f"{rep['first_divergence']}")

    base = out_dir or cfg.out_dir
    crumbs = []
    for run in ("a", "b"):
        sub = os.path.join(base, f"det_{run}")
        buf = io.StringIO()
        with redirect_stdout(buf):
            rc = cli_main(["track-eval", "--steps", "600", "--seed", "5",
                           "--out", sub])
        if rc != 0:
            return False, f"track-eval exited {rc}"
        with open(os.path.join(sub, "tracking_eval.csv"), "rb") as fh:
            crumbs.append(fh.read())
    if crumbs[0] != crumbs[1]:
        return False, "tracking_eval.csv differs between identical runs"
    return True, (f"golden replay max deviation "
                  f"{rep['max_dev_x_ee']:.1e} m; CSV byte-stable")


def check_ablation(cfg: Config, out_dir: Optional[str] = None) -> tuple:
    """Force-aware cloning beats position-only by >=20 points on at
    least two tasks and on the occluded latch, inside 30 min CPU."""
    from .imitation import ablation_report

    t0 = time.perf_counter()
    report = ablation_report(
        n_demos={"wipe-wall": cfg.wipe_demos, "push-latch": cfg.latch_demos,
                 "push-latch-occluded": cfg.latch_demos},
        n_trials=cfg.bc_trials, train_steps=cfg.bc_steps, seed=cfg.seed,
        out_dir=out_dir, optimizer=cfg.bc_optimizer)
    elapsed = time.perf_counter() - t0
    deltas = {r["task"]: r["delta"] for r in report["rows"]}
    big = sum(1 for d in deltas.values() if d >= 0.20)
    occ = deltas.get("push-latch-occluded", -1.0)
    ok = big >= 2 and occ >= 0.20 and elapsed < 1800.0
    pretty = ", ".join(f"{k} {v * 100:+.0f}" for k, v in deltas.items())
    return ok, (f"deltas (points): {pretty}; {big} of 3 >= +20 "
                f"(need 2, occluded must hit it), {elapsed:.0f} s "
                f"(limit 1800)")


def run_all(cfg: Optional[Config] = None, out_dir: Optional[str] = None,
            announce: Callable[[str], None] = print
            ) -> List[CriterionResult]:
    cfg = cfg or Config()
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    results = [
        _result(1, "position tracking",
                lambda: check_position_tracking(cfg.seed), announce),
        _result(2, "estimation accuracy",
                lambda: check_estimator(cfg, out_dir), announce),
        _result(3, "matched-force tracking",
                lambda: check_matched_force(cfg.seed), announce),
        _result(4, "force control sweep", check_force_sweep, announce),
        _result(5, "mode properties", check_mode_properties, announce),
        _result(6, "base compensation", check_base_compensation, announce),
        _result(7, "reward golden tests", check_rewards, announce),
        _result(8, "gradient checks", check_gradients, announce),
        _result(9, "determinism and replay",
                lambda: check_replay_determinism(cfg, out_dir), announce),
        _result(10, "imitation ablation",
                lambda: check_ablation(cfg, out_dir), announce),
    ]
    return results
