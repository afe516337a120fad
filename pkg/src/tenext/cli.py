"""``tenext`` command line: gen-synth, train, infer, eval, gradcheck, plan, simulate.

Exit codes: 0 success, 1 domain failure (no path, controller timeout,
diverged training, gradient-check violation), 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import ConfigError, RunConfig
from .data import FormatError, gen_synthetic_scene, read_corpus, read_scan, spec_to_dict, write_corpus
from .metrics import metrics, pr_curve
from .model import TENeXt, count_parameters
from .nav import (Pose2D, PlanningError, SimulationTimeout, build_grid, rrt_plan, simulate, write_overlay)
from .nav.grid import TRAVERSABLE
from .training import TrainingDiverged, evaluate, prepare, train

log = logging.getLogger("tenext")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    cfg.override(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        cfg.set("seed", args.seed)
    return cfg


def _out_dir(args, command: str) -> Path:
    out = Path(args.out) if args.out else Path("runs") / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def scene_seed(seed: int, index: int) -> int:
    """Independent per-scene seed, so corpora of different sizes share their prefix."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _csv_rows(path: Path, header: str, rows: np.ndarray, fmt: str):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        np.savetxt(fh, rows, fmt=fmt, delimiter=",")


def _read_csv(path, n_cols: int) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{p} does not exist")
    a = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
    if a.shape[1] < n_cols:
        raise FormatError(f"{p}: expected at least {n_cols} columns, got {a.shape[1]}")
    return a


# ---------------------------------------------------------------------------
# commands


def cmd_gen_synth(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, "gen-synth")
    spec = cfg.scene_spec()
    seed = cfg.get("seed")
    scenes = [gen_synthetic_scene(scene_seed(seed, i), spec) for i in range(args.scenes)]
    write_corpus(out, scenes, "semantickitti", {"generator": "synthetic", "seed": seed, "spec": spec_to_dict(spec)})
    cfg.write(out / "config.txt")
    print(f"wrote {len(scenes)} scenes to {out}")
    return EXIT_OK


def _split(scenes, n_val: int):
    if len(scenes) < 2:
        raise UsageError("training needs at least 2 scenes (train + validation)")
    n_val = min(max(n_val, 1), len(scenes) - 1)
    return scenes[:-n_val], scenes[-n_val:]


def cmd_train(args) -> int:
    cfg = _config(args)
    scenes, _ = read_corpus(args.data)
    out = _out_dir(args, "train")
    mc, tc = cfg.model_config(), cfg.train_config()
    tr, va = _split(scenes, cfg.get("data.val_scenes"))
    model = TENeXt(mc)
    cfg.write(out / "config.txt")
    print(f"model {count_parameters(model)} parameters; {len(tr)} train / {len(va)} val scenes")
    res = train(model, tr, va, tc, out_dir=out, resume=args.resume, max_epochs_this_run=args.stop_after)
    print(f"best val F1 {res.best_f1:.4f} at epoch {res.best_epoch}; outputs in {out}")
    return EXIT_OK


def _load_model(path):
    model, meta = ckpt.load_checkpoint(path)
    return model, meta


def cmd_infer(args) -> int:
    model, _ = _load_model(args.ckpt)
    cloud = read_scan(args.scan)
    p = model.predict_points(cloud.points)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = np.column_stack([cloud.points.astype(np.float64), p.astype(np.float64)])
    _csv_rows(out, "x,y,z,probability", rows, "%.9g")
    if args.sidecar:
        np.asarray(p, dtype="<f4").tofile(args.sidecar)
    print(f"wrote {len(p)} probabilities to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    model, meta = _load_model(args.ckpt)
    scenes, _ = read_corpus(args.data)
    prepared = [prepare(s, model.config.quantization_scale) for s in scenes]
    counts, scores, truth = evaluate(model, prepared, cfg.get("eval.threshold"), per_point=args.per_point,
                                     return_scores=True)
    report = dict(metrics(counts))
    report["counts"] = {"tp": counts.tp, "fp": counts.fp, "fn": counts.fn, "tn": counts.tn}
    report["n_scenes"] = len(scenes)
    report["space"] = "point" if args.per_point else "voxel"
    report["threshold"] = cfg.get("eval.threshold")
    rep = Path(args.report)
    rep.parent.mkdir(parents=True, exist_ok=True)
    if truth.min() != truth.max():
        curve = pr_curve(scores, truth, cfg.get("eval.n_thresholds"))
        report["auc_pr"] = curve.auc
        curve.to_csv(rep.with_suffix(".pr.csv"))
        curve.to_svg(rep.with_suffix(".pr.svg"))
    else:
        report["auc_pr"] = None
        report.setdefault("undefined", []).append("auc_pr")
    rep.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    cfg.write(rep.with_suffix(".config.txt"))
    print(f"F1 {report['f1']:.4f}  mIoU {report['miou']:.4f}  acc {report['accuracy']:.4f}  AUC-PR {report['auc_pr']}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(seed=args.seed or 0)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} op(s) over tolerance: {', '.join(failed)}")
        return EXIT_DOMAIN
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def _xy(cfg, key, fallback):
    v = cfg.get(key)
    if v is None:
        return np.asarray(fallback, dtype=np.float64)
    if len(v) != 2:
        raise ConfigError(f"{key} needs two numbers x,y")
    return np.asarray(v, dtype=np.float64)


def default_goal(grid, start, reach: float = 8.0) -> np.ndarray:
    """Traversable cell centre nearest the point ``reach`` metres along +x from ``start``."""
    ij = np.argwhere(grid.state == TRAVERSABLE)
    if len(ij) == 0:
        raise PlanningError("grid has no traversable cells")
    centres = grid.cell_center(ij)
    target = np.asarray(start) + np.array([reach, 0.0])
    return centres[int(np.argmin(np.sum((centres - target) ** 2, axis=1)))]


def _grid_from_cloud(cfg, cloud_csv):
    a = _read_csv(cloud_csv, 4)
    return build_grid(a[:, :3], a[:, 3], cfg.grid_params())


def cmd_plan(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, "plan")
    grid = _grid_from_cloud(cfg, args.cloud)
    start = _xy(cfg, "plan.start", (0.0, 0.0))
    goal = _xy(cfg, "plan.goal", default_goal(grid, start))
    cfg.set("plan.start", tuple(float(v) for v in start))
    cfg.set("plan.goal", tuple(float(v) for v in goal))
    cfg.write(out / "config.txt")
    np.save(out / "grid.npy", grid.state)
    try:
        path = rrt_plan(grid, start, goal, cfg.rrt_params())
    except PlanningError as e:
        write_overlay(out / "plan.svg", grid, start=start, goal=goal)
        print(f"planning failed: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    path.to_csv(out / "path.csv")
    write_overlay(out / "plan.svg", grid, path, start=start, goal=goal)
    print(f"path with {len(path)} waypoints, length {path.length():.2f} m after {path.iterations} iterations")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, "simulate")
    wps = _read_csv(args.path, 2)[:, :2]
    heading = float(np.arctan2(*(wps[1] - wps[0])[::-1])) if len(wps) > 1 else 0.0
    start = Pose2D(wps[0, 0], wps[0, 1], heading if args.heading is None else args.heading)
    cfg.write(out / "config.txt")
    grid = _grid_from_cloud(cfg, args.cloud) if args.cloud else None
    try:
        traj = simulate(wps, start, cfg.gains(), cfg.sim_params())
        code = EXIT_OK
    except SimulationTimeout as e:
        traj = e.trajectory
        print(f"simulation failed: {e}", file=sys.stderr)
        code = EXIT_DOMAIN
    traj.to_csv(out / "trajectory.csv")
    write_overlay(out / "trajectory.svg", grid, wps, traj.array()[:, 1:3], start=wps[0], goal=wps[-1])
    fp = traj.final_pose
    print(f"{'reached' if traj.success else 'missed'} goal after {traj.rows[-1][0]:.2f} s; "
          f"final pose ({fp.x:.3f}, {fp.y:.3f}, {fp.theta:.3f})")
    return code


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tenext", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
        if out:
            p.add_argument("--out", help="output directory (default: runs/<command>-<timestamp>)")

    p = sub.add_parser("gen-synth", help="write a synthetic labelled corpus")
    common(p)
    p.add_argument("--scenes", type=int, default=10)
    p.set_defaults(fn=cmd_gen_synth)

    p = sub.add_parser("train", help="train on a corpus; saves best.ckpt and history.csv")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--resume", action="store_true", help="continue from <out>/state.ckpt")
    p.add_argument("--stop-after", type=int, default=None, metavar="N",
                   help="stop after N epochs of this invocation (resume later with --resume)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="per-point probabilities for one scan")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scan", required=True)
    p.add_argument("--out", required=True, help="CSV x,y,z,probability")
    p.add_argument("--sidecar", help="also write probabilities as packed little-endian f32")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="confusion metrics, AUC-PR and PR curve over a corpus")
    common(p, out=False)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="JSON report; PR CSV/SVG are written beside it")
    p.add_argument("--per-point", action="store_true", help="score original points instead of voxels")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="float64 finite-difference suite over every op")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("plan", help="traversability grid + RRT from an inferred cloud CSV")
    common(p)
    p.add_argument("--cloud", required=True, help="infer output (x,y,z,probability)")
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("simulate", help="track a path CSV with the controller")
    common(p)
    p.add_argument("--path", required=True, help="path CSV (x,y) from plan")
    p.add_argument("--cloud", help="inferred cloud CSV, only for the SVG backdrop")
    p.add_argument("--heading", type=float, default=None, help="start heading (default: along the first segment)")
    p.set_defaults(fn=cmd_simulate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (UsageError, ConfigError, FileNotFoundError, FormatError, ckpt.CheckpointError,
            IsADirectoryError, PermissionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (PlanningError, SimulationTimeout, TrainingDiverged) as e:
        print(f"failed: {e}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
