"""Command-line entry point.

Every experiment and the teleop service hang off one ``forcesim``
executable. Common behavior across subcommands:

* ``--config`` loads a YAML file over the built-in defaults; ``--seed``
  and ``--out`` override the corresponding config fields; the
  environment variables FORCESIM_OUT / FORCESIM_BIND / FORCESIM_PORT sit
  between the file and the flags.
* every run writes a ``<subcommand>_manifest.json`` next to its outputs
  with the fully resolved config, seed, version and wall-clock, and
  ``forcesim rerun <manifest>`` reproduces the run from it.
* CSV numbers are written with ``repr`` so reruns with the same seed are
  byte-identical.
* subcommands that check thresholds take ``--assert`` and exit with
  status 2 when a check fails, printing one PASS/FAIL line per check.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import os
import sys
import time
from typing import List, Optional, Sequence

import numpy as np

from .config import Config, ManifestWriter, config_from_manifest, load_config


def _fmt(v) -> str:
    """CSV cell formatting: repr for floats so output is byte-stable."""
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: str, header: Sequence[str], rows) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _checks(pairs) -> int:
    """Print PASS/FAIL lines; return 0 if all passed else 2."""
    ok = True
    for passed, text in pairs:
        print(f"{'PASS' if passed else 'FAIL'}  {text}")
        ok = ok and passed
    return 0 if ok else 2


def _vec_cols(prefix: str) -> List[str]:
    return [f"{prefix}_{ax}" for ax in "xyz"]


TICK_COLS = (["t"] + _vec_cols("x_cmd") + _vec_cols("x_ee")
             + _vec_cols("x_target") + _vec_cols("v_ee")
             + _vec_cols("f_ee_cmd") + _vec_cols("f_contact")
             + _vec_cols("f_ee_hat") + _vec_cols("f_ee_truth")
             + _vec_cols("v_base_cmd") + _vec_cols("v_base")
             + _vec_cols("f_base_ext") + ["mode"])


def _tick_rows(logs):
    for l in logs:
        yield ([l.t] + list(l.cmd.x_ee) + list(l.state.x_ee)
               + list(l.x_target) + list(l.state.v_ee)
               + list(l.cmd.f_ee) + list(l.state.f_contact)
               + list(l.est.f_ee) + list(l.est_truth.f_ee)
               + list(l.cmd.v_base) + list(l.state.v_base)
               + list(l.f_base_ext) + [l.mode.kind])


def _load_model(path: Optional[str]):
    if path is None:
        return None, "oracle"
    from .estimator import RegressorModel

    return RegressorModel.load(path), "model"


def _load_dataset(path: str):
    """Episode dir or .npz matrix cache, either way an EstimatorDataset."""
    from .datagen import dataset_from_dir
    from .estimator import EstimatorDataset

    if os.path.isdir(path):
        return dataset_from_dir(path)
    return EstimatorDataset.load(path)


# ---------------------------------------------------------------------------
# Subcommand handlers. Each takes (cfg, args, manifest) and returns an
# exit code; knobs that affect outputs all live in cfg so a manifest
# pins them.


def cmd_track_eval(cfg: Config, args, mw: ManifestWriter) -> int:
    from . import scenarios
    from .rollout import window_table

    model, source = _load_model(args.model)
    rows, match_rows, checks = [], [], []
    for i in range(cfg.track_seeds):
        seed = cfg.seed + i
        t0 = time.perf_counter()
        logs, metrics = scenarios.position_tracking(
            steps=cfg.track_steps, seed=seed,
            estimate_source=source, model=model)
        elapsed = time.perf_counter() - t0
        dt = logs[1].t - logs[0].t
        for k, (t_start, terr, eerr) in enumerate(window_table(logs, dt)):
            rows.append([seed, k, t_start, *terr, *eerr])
        frac = metrics["frac_windows_under_1cm"]
        print(f"seed {seed}: {metrics['windows']} windows, "
              f"{frac * 100:.1f}% under 1 cm, "
              f"worst {metrics['worst_window_m']:.4f} m, "
              f"{elapsed:.1f} s")
        checks.append((frac >= 0.95,
                       f"seed {seed}: >=95% of windows under 0.01 m "
                       f"(got {frac * 100:.1f}%)"))
        checks.append((elapsed < 30.0,
                       f"seed {seed}: {cfg.track_steps} steps in under "
                       f"30 s (got {elapsed:.1f} s)"))
        if args.forces:
            logs, metrics = scenarios.matched_force_tracking(
                steps=cfg.track_steps, seed=seed,
                estimate_source=source, model=model)
            for k, (t_start, terr, eerr) in enumerate(
                    window_table(logs, dt)):
                match_rows.append([seed, k, t_start, *terr, *eerr])
            frac = metrics["frac_windows_under_2cm"]
            print(f"seed {seed} (matched forces): {metrics['windows']} "
                  f"windows, {frac * 100:.1f}% under 2 cm, "
                  f"worst {metrics['worst_window_m']:.4f} m")
            checks.append((frac >= 0.90,
                           f"seed {seed}: >=90% of matched-force windows "
                           f"under 0.02 m (got {frac * 100:.1f}%)"))

    header = (["seed", "window", "t_start"] + _vec_cols("err")
              + _vec_cols("est_err"))
    path = mw.add(os.path.join(cfg.out_dir, "tracking_eval.csv"))
    _write_csv(path, header, rows)
    if args.forces:
        path = mw.add(os.path.join(cfg.out_dir, "matched_force_eval.csv"))
        _write_csv(path, header, match_rows)
    return _checks(checks) if args.assert_ else 0


def cmd_force_eval(cfg: Config, args, mw: ManifestWriter) -> int:
    from . import scenarios

    model, source = _load_model(args.model)
    levels = cfg.force_levels
    logs, metrics = scenarios.force_sweep(
        levels=levels, hold_s=cfg.force_hold_s,
        estimate_source=source, model=model)
    rows = []
    for r in metrics["rows"]:
        rows.append([r["level"], r["achieved"], r["pct_error"],
                     *r["est_rms"]])
        pct = "" if r["pct_error"] is None else f"{r['pct_error']:.2f}%"
        print(f"level {r['level']:5.1f} N -> achieved {r['achieved']:8.3f} N"
              f"  {pct}")
    path = mw.add(os.path.join(cfg.out_dir, "force_sweep.csv"))
    _write_csv(path, ["level", "achieved", "pct_error",
                      "est_rms_x", "est_rms_y", "est_rms_z"], rows)
    log_path = mw.add(os.path.join(cfg.out_dir, "force_sweep_log.csv"))
    _write_csv(log_path, TICK_COLS, _tick_rows(logs))
    if not args.assert_:
        return 0
    checks = []
    for r in metrics["rows"]:
        if r["level"] == 0.0:
            checks.append((abs(r["achieved"]) < 0.5,
                           f"zero command: |achieved| < 0.5 N "
                           f"(got {abs(r['achieved']):.3f})"))
        else:
            checks.append((r["pct_error"] <= 5.0,
                           f"level {r['level']:.0f} N within 5% "
                           f"(got {r['pct_error']:.2f}%)"))
    return _checks(checks)


# Per-mode pass criteria for demo-mode --assert; each returns
# (ok, text) pairs from the scenario metrics.
def _demo_checks(mode: str, m: dict) -> list:
    if mode == "position":
        return [(m["frac_windows_under_1cm"] >= 0.95,
                 f"tracking windows under 1 cm >= 95% "
                 f"(got {m['frac_windows_under_1cm'] * 100:.1f}%)")]
    if mode == "force":
        return [(m["pct_error"] <= 5.0,
                 f"achieved within 5% of command "
                 f"(got {m['pct_error']:.2f}%)")]
    if mode == "impedance":
        return [(m["worst_pct_error"] <= 2.0,
                 f"displacement within 2% of F/K "
                 f"(got {m['worst_pct_error']:.2f}%)")]
    if mode == "force-tracking":
        return [(m["drift_after_release_m"] < 0.01,
                 f"drift under 0.01 m over {m['settle_s']:.0f} s "
                 f"(got {m['drift_after_release_m']:.5f} m)")]
    if mode == "hybrid":
        return [(m["max_tangential_error_m"] < 0.02,
                 f"tangential error under 0.02 m "
                 f"(got {m['max_tangential_error_m']:.4f} m)"),
                (m["worst_normal_pct"] <= 5.0,
                 f"normal force within 5% of {m['press_n']:.0f} N "
                 f"(got {m['worst_normal_pct']:.2f}%)")]
    if mode == "payload":
        return [(m["abs_z_error_m"] < 0.02,
                 f"|z error| under 0.02 m (got {m['abs_z_error_m']:.4f} m)")]
    if mode == "halt":
        return [(m["tail_speed"] < 0.05,
                 f"base speed under 0.05 m/s (got {m['tail_speed']:.4f})")]
    if mode == "kick":
        return [(m["pct_error"] <= 10.0,
                 f"yield speed within 10% of F/D "
                 f"(got {m['pct_error']:.2f}%)")]
    if mode == "matched":
        return [(m["frac_windows_under_2cm"] >= 0.90,
                 f"matched-force windows under 2 cm >= 90% "
                 f"(got {m['frac_windows_under_2cm'] * 100:.1f}%)")]
    return []


def cmd_demo_mode(cfg: Config, args, mw: ManifestWriter) -> int:
    from .scenarios import SCENARIOS

    fn = SCENARIOS[args.mode]
    kwargs = {"seed": cfg.seed} if args.mode in ("position", "matched") \
        else {}
    logs, metrics = fn(**kwargs)
    stem = args.mode.replace("-", "_")
    log_path = mw.add(os.path.join(cfg.out_dir, f"demo_{stem}.csv"))
    _write_csv(log_path, TICK_COLS, _tick_rows(logs))
    metrics_path = mw.add(
        os.path.join(cfg.out_dir, f"demo_{stem}_metrics.jsonl"))
    with open(metrics_path, "w") as fh:
        fh.write(json.dumps({"mode": args.mode, **metrics},
                            sort_keys=True) + "\n")
    for key, value in metrics.items():
        print(f"{key}: {value}")
    return _checks(_demo_checks(args.mode, metrics)) if args.assert_ else 0


def cmd_gen_data(cfg: Config, args, mw: ManifestWriter) -> int:
    from .datagen import SynthesisConfig, build_dataset

    syn = SynthesisConfig(episodes=args.episodes or cfg.est_train_episodes,
                          ticks=cfg.est_ticks, seed=cfg.seed)
    out = args.out_data or os.path.join(cfg.out_dir, "estimator_train.npz")
    t0 = time.perf_counter()
    dataset, paths, _ = build_dataset(syn, out_dir=args.keep_episodes)
    dataset.save(mw.add(out))
    for p in paths:
        mw.add(p)
    print(f"{syn.episodes} episodes x {syn.ticks} ticks "
          f"({len(dataset)} windows) in {time.perf_counter() - t0:.0f} s "
          f"-> {out}")
    return 0


def cmd_train_estimator(cfg: Config, args, mw: ManifestWriter) -> int:
    from .estimator import (RegressorModel, evaluate_estimator,
                            train_regressor, write_eval_csv)

    dataset = _load_dataset(args.data)
    t0 = time.perf_counter()
    model = RegressorModel.fresh(hidden=tuple(cfg.est_hidden), seed=cfg.seed)
    model, report = train_regressor(
        dataset, model=model, steps=cfg.est_steps, batch=cfg.est_batch,
        lr=cfg.est_lr, lr_final=cfg.est_lr_final,
        optimizer=cfg.est_optimizer, weight_decay=cfg.est_weight_decay,
        seed=cfg.seed)
    model_out = args.model_out or os.path.join(cfg.out_dir, "estimator.bin")
    os.makedirs(os.path.dirname(model_out) or ".", exist_ok=True)
    model.save(mw.add(model_out))
    print(f"trained {cfg.est_steps} steps in {time.perf_counter() - t0:.0f} s"
          f", final loss {report['final_loss']:.6f} -> {model_out}")
    if not args.val:
        return 0
    ev = evaluate_estimator(model, _load_dataset(args.val))
    csv_path = mw.add(os.path.join(cfg.out_dir, "estimator_eval.csv"))
    write_eval_csv(ev, csv_path)
    elapsed = time.perf_counter() - t0
    return _print_eval(ev, elapsed, args.assert_)


def _print_eval(ev: dict, elapsed: Optional[float], do_assert: bool) -> int:
    for group in ("f_ee", "x_ee"):
        vals = {k: v for k, v in ev["rms"].items() if k.startswith(group)}
        print(f"held-out {group} rms: " + "  ".join(
            f"{k}={v:.4f}" for k, v in vals.items()))
    if not do_assert:
        return 0
    checks = []
    for ax in "xyz":
        v = ev["rms"][f"f_ee_{ax}"]
        checks.append((v < 5.0, f"f_ee_{ax} rms < 5 N (got {v:.3f})"))
        v = ev["rms"][f"x_ee_{ax}"]
        checks.append((v < 0.02, f"x_ee_{ax} rms < 0.02 m (got {v:.4f})"))
        v = ev["oracle_rms"][f"f_ee_{ax}"]
        checks.append((v < 0.1, f"oracle f_ee_{ax} rms < 0.1 N "
                       f"(got {v:.2e})"))
    if elapsed is not None:
        checks.append((elapsed < 600.0,
                       f"train+eval under 10 min (got {elapsed:.0f} s)"))
    return _checks(checks)


def cmd_eval_estimator(cfg: Config, args, mw: ManifestWriter) -> int:
    from .estimator import RegressorModel, evaluate_estimator, write_eval_csv

    model = RegressorModel.load(args.model)
    ev = evaluate_estimator(model, _load_dataset(args.data))
    csv_path = mw.add(args.out_csv
                      or os.path.join(cfg.out_dir, "estimator_eval.csv"))
    write_eval_csv(ev, csv_path)
    return _print_eval(ev, None, args.assert_)


def cmd_record_expert(cfg: Config, args, mw: ManifestWriter) -> int:
    from .imitation import TASKS, record_demos

    task = TASKS[args.task]
    n = args.episodes or (cfg.wipe_demos if args.task == "wipe-wall"
                          else cfg.latch_demos)
    out_dir = args.demos_out or os.path.join(cfg.out_dir, "demos", args.task)
    os.makedirs(out_dir, exist_ok=True)
    records, paths, stats = record_demos(task, n, seed=cfg.seed,
                                         out_dir=out_dir)
    mw.add(out_dir)
    print(f"{len(records)} episodes under {out_dir} "
          f"({stats['attempts']} attempts, {stats['failed']} failed)")
    return 0


def cmd_train_bc(cfg: Config, args, mw: ManifestWriter) -> int:
    from .imitation import build_bc_dataset, load_demo_records, train_bc

    paths = sorted(glob.glob(os.path.join(args.demos, "*.episode.jsonl")))
    if not paths:
        print(f"no episode files under {args.demos}", file=sys.stderr)
        return 1
    records = load_demo_records(paths)
    include_force = not args.position_only
    dataset = build_bc_dataset(records, include_force=include_force,
                               seed=cfg.seed)
    policy, report = train_bc(dataset, steps=cfg.bc_steps,
                              batch=cfg.bc_batch, lr=cfg.bc_lr,
                              optimizer=cfg.bc_optimizer, seed=cfg.seed)
    arm = "force" if include_force else "position"
    model_out = args.model_out or os.path.join(cfg.out_dir, f"bc_{arm}.bin")
    os.makedirs(os.path.dirname(model_out) or ".", exist_ok=True)
    policy.save(mw.add(model_out))
    print(f"{arm}-arm clone of {len(records)} episodes, final loss "
          f"{report['final_loss']:.6f} -> {model_out}")
    return 0


def cmd_ablation(cfg: Config, args, mw: ManifestWriter) -> int:
    from .imitation import ablation_report

    out_dir = args.ablation_out or os.path.join(cfg.out_dir, "ablation")
    report = ablation_report(
        n_demos={"wipe-wall": cfg.wipe_demos, "push-latch": cfg.latch_demos,
                 "push-latch-occluded": cfg.latch_demos},
        n_trials=cfg.bc_trials, train_steps=cfg.bc_steps, seed=cfg.seed,
        out_dir=out_dir, optimizer=cfg.bc_optimizer)
    mw.add(os.path.join(out_dir, "ablation.csv"))
    mw.add(os.path.join(out_dir, "ablation.txt"))
    print(report["summary"], end="")
    if not args.assert_:
        return 0
    deltas = {r["task"]: r["delta"] for r in report["rows"]}
    big = sum(1 for d in deltas.values() if d >= 0.20)
    occ = deltas.get("push-latch-occluded", 0.0)
    return _checks([
        (big >= 2, f">=20 point gap on >=2 of 3 tasks (got {big})"),
        (occ >= 0.20, f">=20 point gap on push-latch-occluded "
                      f"(got {occ * 100:+.0f} points)"),
    ])


def cmd_replay(cfg: Config, args, mw: ManifestWriter) -> int:
    from .episodes import read_episode, replay_episode

    model, _ = _load_model(args.model)
    record = read_episode(args.episode)
    rep = replay_episode(record, model=model)
    print(f"{rep['frames']} frames, max |dx_ee| {rep['max_dev_x_ee']:.2e} m,"
          f" max |dv_ee| {rep['max_dev_v_ee']:.2e},"
          f" max |dv_base| {rep['max_dev_v_base']:.2e}")
    if rep["first_divergence"] is not None:
        print(f"first divergence at frame {rep['first_divergence']}")
    return _checks([(rep["max_dev_x_ee"] <= args.tol,
                     f"replay deviation <= {args.tol:g} m "
                     f"(got {rep['max_dev_x_ee']:.2e})")])


def _find_ui_root(explicit: Optional[str]) -> str:
    candidates = [explicit, os.environ.get("FORCESIM_UI"),
                  os.path.join("frontend", "dist"),
                  os.path.join(os.path.dirname(__file__), os.pardir,
                               os.pardir, "frontend", "dist")]
    for c in candidates:
        if c and os.path.isfile(os.path.join(c, "index.html")):
            return os.path.abspath(c)
    raise FileNotFoundError(
        "no built UI found; build it with `npm run build` under frontend/ "
        "or pass --with-ui PATH")


def cmd_serve(cfg: Config, args, mw: ManifestWriter) -> int:
    from .server import run_server
    from .teleop import TeleopService

    ui_root = None
    if args.with_ui is not False:
        ui_root = _find_ui_root(args.with_ui)
        print(f"serving UI from {ui_root}")
    episodes_dir = args.episodes_dir or os.path.join(cfg.out_dir, "episodes")
    os.makedirs(episodes_dir, exist_ok=True)
    mw.add(episodes_dir)
    service = TeleopService(out_dir=episodes_dir, seed=cfg.seed)
    run_server(host=cfg.bind, port=cfg.port, service=service,
               rate=cfg.rate, ui_root=ui_root)
    return 0


def cmd_acceptance(cfg: Config, args, mw: ManifestWriter) -> int:
    from .acceptance import run_all

    out_dir = args.acceptance_out or os.path.join(cfg.out_dir, "acceptance")
    os.makedirs(out_dir, exist_ok=True)
    mw.add(out_dir)
    results = run_all(cfg, out_dir)
    failed = [r for r in results if not r.passed]
    print(f"\n{len(results) - len(failed)}/{len(results)} criteria passed")
    return 2 if failed else 0


# ---------------------------------------------------------------------------
# Parser plumbing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="YAML",
                        help="config file over the defaults")
    common.add_argument("--seed", type=int, default=None,
                        help="base random seed")
    common.add_argument("--out", default=None, metavar="DIR",
                        help="output directory (default: runs)")

    p = argparse.ArgumentParser(
        prog="forcesim",
        description="desk-scale unified force-position control testbed")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_, **kw):
        sp = sub.add_parser(name, parents=[common], help=help_, **kw)
        sp.set_defaults(func=fn)
        return sp

    sp = add("track-eval", cmd_track_eval,
             "random-target tracking rollouts with windowed error CSV")
    sp.add_argument("--steps", type=int, default=None,
                    help="rollout length in ticks")
    sp.add_argument("--seeds", type=int, default=None,
                    help="number of seeded rollouts")
    sp.add_argument("--forces", action="store_true",
                    help="also run the matched-force protocol")
    sp.add_argument("--model", help="trained estimator in the loop")
    sp.add_argument("--assert", dest="assert_", action="store_true",
                    help="exit 2 unless tracking thresholds hold")

    sp = add("force-eval", cmd_force_eval,
             "commanded-vs-achieved force sweep against the wall")
    sp.add_argument("--levels", default=None,
                    help="comma-separated force levels in N")
    sp.add_argument("--hold", type=float, default=None,
                    help="seconds to dwell per level")
    sp.add_argument("--model", help="trained estimator in the loop")
    sp.add_argument("--assert", dest="assert_", action="store_true")

    sp = add("demo-mode", cmd_demo_mode,
             "scripted single-mode demonstration with CSV state log")
    from .scenarios import SCENARIOS
    sp.add_argument("--mode", required=True, choices=sorted(SCENARIOS))
    sp.add_argument("--assert", dest="assert_", action="store_true")

    sp = add("gen-data", cmd_gen_data,
             "synthesize excitation rollouts for estimator training")
    sp.add_argument("--episodes", type=int, default=None)
    sp.add_argument("--ticks", type=int, default=None)
    sp.add_argument("--out-data", default=None, metavar="NPZ",
                    help="matrix cache to write")
    sp.add_argument("--keep-episodes", metavar="DIR", default=None,
                    help="also write the raw episode files here")

    sp = add("train-estimator", cmd_train_estimator,
             "fit the force/state regressor on a generated dataset")
    sp.add_argument("--data", required=True,
                    help="episode dir or .npz from gen-data")
    sp.add_argument("--val", default=None,
                    help="held-out dataset to evaluate after training")
    sp.add_argument("--model-out", default=None)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--batch", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--optimizer", choices=("sgd", "adam"), default=None)
    sp.add_argument("--weight-decay", type=float, default=None)
    sp.add_argument("--hidden", default=None,
                    help="comma-separated layer widths")
    sp.add_argument("--assert", dest="assert_", action="store_true")

    sp = add("eval-estimator", cmd_eval_estimator,
             "score a trained estimator on a held-out dataset")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out-csv", default=None)
    sp.add_argument("--assert", dest="assert_", action="store_true")

    sp = add("record-expert", cmd_record_expert,
             "scripted-expert demonstrations for behavior cloning")
    from .imitation import TASKS
    sp.add_argument("--task", required=True, choices=sorted(TASKS))
    sp.add_argument("--episodes", type=int, default=None)
    sp.add_argument("--demos-out", metavar="DIR", default=None)

    sp = add("train-bc", cmd_train_bc,
             "behavior-clone recorded demonstrations")
    sp.add_argument("--demos", required=True, metavar="DIR")
    sp.add_argument("--position-only", action="store_true",
                    help="drop the force channel (ablation arm)")
    sp.add_argument("--model-out", default=None)
    sp.add_argument("--steps", type=int, default=None)

    sp = add("ablation", cmd_ablation,
             "force-aware vs position-only cloning comparison")
    sp.add_argument("--trials", type=int, default=None)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--wipe-demos", type=int, default=None)
    sp.add_argument("--latch-demos", type=int, default=None)
    sp.add_argument("--ablation-out", metavar="DIR", default=None)
    sp.add_argument("--assert", dest="assert_", action="store_true")

    sp = add("replay", cmd_replay,
             "re-run a recorded episode and diff the states")
    sp.add_argument("episode", help="path to an .episode.jsonl file")
    sp.add_argument("--model", default=None,
                    help="estimator model if one was in the loop")
    sp.add_argument("--tol", type=float, default=1e-9)

    sp = add("serve", cmd_serve, "run the teleoperation WebSocket server")
    sp.add_argument("--bind", default=None)
    sp.add_argument("--port", type=int, default=None)
    sp.add_argument("--rate", type=float, default=None,
                    help="ticks per second")
    sp.add_argument("--with-ui", nargs="?", const=None, default=False,
                    metavar="DIR", help="serve the browser cockpit too")
    sp.add_argument("--episodes-dir", default=None,
                    help="where recordings land")

    sp = add("acceptance", cmd_acceptance,
             "run the full acceptance suite, one line per criterion")
    sp.add_argument("--acceptance-out", metavar="DIR", default=None)

    sp = sub.add_parser("rerun", help="reproduce a run from its manifest")
    sp.add_argument("manifest")

    return p


def _apply_overrides(cfg: Config, args) -> None:
    """Copy provided flags onto the matching config fields.

    A few flags map to different fields depending on the subcommand
    (--steps means rollout ticks for track-eval but optimizer steps for
    the trainers), so those are resolved here rather than in the table.
    """
    cmd = args.command
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    steps = getattr(args, "steps", None)
    if steps is not None:
        if cmd == "track-eval":
            cfg.track_steps = steps
        elif cmd == "train-estimator":
            cfg.est_steps = steps
        else:
            cfg.bc_steps = steps
    if getattr(args, "seeds", None) is not None:
        cfg.track_seeds = args.seeds
    if getattr(args, "levels", None):
        cfg.force_levels = [float(s) for s in args.levels.split(",")]
    if getattr(args, "hold", None) is not None:
        cfg.force_hold_s = args.hold
    if getattr(args, "ticks", None) is not None:
        cfg.est_ticks = args.ticks
    if getattr(args, "batch", None) is not None:
        cfg.est_batch = args.batch
    if getattr(args, "lr", None) is not None:
        cfg.est_lr = args.lr
    if getattr(args, "optimizer", None) is not None:
        cfg.est_optimizer = args.optimizer
    if getattr(args, "weight_decay", None) is not None:
        cfg.est_weight_decay = args.weight_decay
    if getattr(args, "hidden", None):
        cfg.est_hidden = [int(s) for s in args.hidden.split(",")]
    if getattr(args, "trials", None) is not None:
        cfg.bc_trials = args.trials
    if getattr(args, "wipe_demos", None) is not None:
        cfg.wipe_demos = args.wipe_demos
    if getattr(args, "latch_demos", None) is not None:
        cfg.latch_demos = args.latch_demos
    if getattr(args, "bind", None) is not None:
        cfg.bind = args.bind
    if getattr(args, "port", None) is not None:
        cfg.port = args.port
    if getattr(args, "rate", None) is not None:
        cfg.rate = args.rate


def main(argv: Optional[List[str]] = None,
         forced_cfg: Optional[Config] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "rerun":
        with open(args.manifest) as fh:
            manifest = json.load(fh)
        inner = manifest.get("argv") or []
        if not inner:
            print("manifest records no argv to rerun", file=sys.stderr)
            return 1
        return main(inner, forced_cfg=config_from_manifest(args.manifest))

    cfg = forced_cfg if forced_cfg is not None \
        else load_config(getattr(args, "config", None))
    _apply_overrides(cfg, args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with ManifestWriter(args.command, cfg, argv) as mw:
        rc = args.func(cfg, args, mw)
    return rc


if __name__ == "__main__":
    sys.exit(main())
