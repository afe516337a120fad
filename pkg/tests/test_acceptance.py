"""Acceptance run: one test per headline criterion, each recording a PASS/FAIL line.

    pytest tests/test_acceptance.py -v        # lines are repeated in the summary
    python tests/test_acceptance.py           # same, with live output

The overfit and end-to-end criteria share one CLI pipeline run (about ten
minutes on a single core); the determinism criterion runs a second, shorter
pipeline twice.
"""
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import CONV_CONFIGS, conv_equivalence_case, fine_segment_hits
from scenarios import CORRIDOR_GOAL, CORRIDOR_START, corridor_grid, enclosed_goal_grid, mc_starts
from test_metrics import KEYS, direct

from tenext.cli import main
from tenext.gradcheck import run_suite
from tenext.metrics import ConfusionCounts, metrics
from tenext.model import ModelConfig, TENeXt, count_parameters
from tenext.nav import Gains, PlanningFailed, Pose2D, RRTParams, SimParams, control_law, rrt_plan, simulate
from tenext.optim import TrainConfig, lr_at
from tenext.sparse import ones_features, quantize

RESULTS: list[str] = []


def record(name: str, ok: bool, detail: str, elapsed: float | None = None):
    t = f" [{elapsed:.1f} s]" if elapsed is not None else ""
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}{t}"
    RESULTS.append(line)
    print(line)
    return ok


def test_conv_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, n = {}, 0
    for cfg in CONV_CONFIGS:
        worst[cfg] = max(conv_equivalence_case(rng, *cfg) for _ in range(50))
        n += 50
    dt = time.perf_counter() - t0
    w = max(worst.values())
    ok = w < 1e-5 and dt < 60
    record("conv equivalence", ok, f"{len(CONV_CONFIGS)} (K, stride, transposed) configs x 50 grids = {n}; "
           f"max abs dev {w:.2e} (< 1e-5)", dt)
    assert ok, worst


def test_gradient_suite():
    t0 = time.perf_counter()
    res = run_suite(seed=0)
    dt = time.perf_counter() - t0
    bad = [r.line() for r in res if not r.passed]
    worst = max(res, key=lambda r: r.max_rel_err)
    ok = not bad and dt < 120
    record("gradient suite", ok, f"{len(res)} ops at eps=1e-3, worst {worst.name} {worst.max_rel_err:.2e} (< 1e-4)", dt)
    # seed sensitivity is reported, not asserted: see the notes on the block case
    sweep = {s: [r.name for r in run_suite(seed=s) if not r.passed] for s in range(1, 11)}
    over = {s: v for s, v in sweep.items() if v}
    info = f"      info: seeds 1-10 {10 - len(over)}/10 fully within tolerance; over: {over or 'none'}"
    RESULTS.append(info)
    print(info)
    assert ok, bad


def test_metric_formulas():
    m = metrics(ConfusionCounts(tp=3, fp=1, fn=1, tn=5))
    hand = {"f1": 0.75, "accuracy": 0.8, "miou": 0.657142857142857, "tpr": 0.75, "tnr": 5 / 6,
            "precision": 0.75, "recall": 0.75}
    dev = max(abs(m[k] - v) for k, v in hand.items())
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        c = rng.integers(0, 10**6, 4)
        ref = direct(*map(int, c))
        got = metrics(ConfusionCounts(*c))
        worst = max(worst, max(abs(got[k] - float(ref[k])) for k in KEYS))
    ok = dev <= 1e-9 and worst <= 1e-9
    record("metric formulas", ok, f"hand example dev {dev:.1e}; 1000 random tuples max dev {worst:.1e} (<= 1e-9)")
    assert ok


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-synth -> train -> infer -> eval -> plan -> simulate through the CLI."""
    d = tmp_path_factory.mktemp("e2e")
    steps = [
        # default lidar scene: 26k beams of which ~20k return inside the scene square
        ("gen-synth", ["gen-synth", "--out", str(d / "data"), "--scenes", "10", "--seed", "0"]),
        ("train", ["train", "--data", str(d / "data"), "--out", str(d / "train"), "--seed", "0",
                   "--set", "model.kernel_size=7", "--set", "train.target_f1=0.95"]),
        ("infer", ["infer", "--ckpt", str(d / "train" / "best.ckpt"),
                   "--scan", str(d / "data" / "velodyne" / "000000.bin"), "--out", str(d / "cloud.csv")]),
        ("eval", ["eval", "--ckpt", str(d / "train" / "best.ckpt"), "--data", str(d / "data"),
                  "--report", str(d / "eval" / "report.json")]),
        ("plan", ["plan", "--cloud", str(d / "cloud.csv"), "--out", str(d / "plan"), "--seed", "0"]),
        ("simulate", ["simulate", "--path", str(d / "plan" / "path.csv"), "--cloud", str(d / "cloud.csv"),
                      "--out", str(d / "sim")]),
    ]
    codes, times = {}, {}
    for name, argv in steps:
        t0 = time.perf_counter()
        codes[name] = main(argv)
        times[name] = time.perf_counter() - t0
        if codes[name] != 0:
            break
    return d, codes, times


def test_overfit_harness(pipeline):
    from tenext.data import read_corpus
    from tenext.training import prepare
    d, codes, times = pipeline
    assert codes.get("train") == 0, codes
    rows = np.loadtxt(d / "train" / "history.csv", delimiter=",", skiprows=1, ndmin=2)
    best = rows[:, 3].max()
    epochs = len(rows)
    scenes, _ = read_corpus(d / "data")
    val = [prepare(s, 0.2) for s in scenes[-2:]]
    lab = np.concatenate([v.labels for v in val])
    base = metrics(ConfusionCounts.from_labels(np.ones_like(lab), lab))["f1"]
    n_pts = int(np.mean([len(s) for s in scenes]))
    ok = best >= 0.95 and epochs <= 300
    record("overfit harness", ok, f"10 scenes (~{n_pts} pts), 8/2 split: best val F1 {best:.4f} at epoch "
           f"{int(rows[rows[:, 3].argmax(), 0])} of {epochs} run (>= 0.95 within 300); "
           f"all-traversable baseline F1 {base:.4f}", times["train"])
    assert ok


def test_parameter_envelope():
    n = count_parameters(TENeXt())
    ok = abs(n - 5.4e6) <= 0.15 * 5.4e6
    record("parameter envelope", ok, f"default model {n:,} parameters ({100 * (n / 5.4e6 - 1):+.1f}% vs 5.4M, +-15%)")
    assert ok


def test_model_contract():
    t0 = time.perf_counter()
    m = TENeXt(ModelConfig.preset("tiny", seed=0))
    rng = np.random.default_rng(5)
    card_ok = range_ok = True
    for _ in range(100):
        n = int(rng.integers(1, 400))
        pts = np.column_stack([rng.uniform(-6, 6, (n, 2)), rng.uniform(0, 1.5, n)])
        x = ones_features(quantize(pts, scale=0.2))
        p = m.predict(x)
        card_ok &= p.shape == (len(x.coords),)
        range_ok &= bool(np.all((p > 0) & (p < 1)))
    cells = rng.integers(-24, 24, (800, 3))
    pts = (cells + 0.5) * 0.2
    base = m.predict_points(pts)
    dev = 0.0
    for axis in range(3):
        for k in (1, -2):
            shift = np.zeros(3)
            shift[axis] = 0.2 * 16 * k
            dev = max(dev, float(np.max(np.abs(m.predict_points(pts + shift) - base))))
    dt = time.perf_counter() - t0
    ok = card_ok and range_ok and dev <= 1e-5 and dt < 60
    record("model contract", ok, f"100 inputs: cardinality {'ok' if card_ok else 'BAD'}, (0,1) range "
           f"{'ok' if range_ok else 'BAD'}; stride-16 translation max dev {dev:.1e} (<= 1e-5)", dt)
    assert ok


def test_scheduler_closed_form():
    c = TrainConfig()
    lr0, lmin = c.lr, c.lr * c.lr_min_ratio
    checks = [lr_at(0, 0, c) - 0.0]
    start, T = c.warmup_epochs, c.restart_period
    for _ in range(3):
        checks.append(lr_at(start, 0, c) - lr0)
        checks.append(lr_at(start + T // 2, 0, c) - (lmin + 0.5 * (lr0 - lmin)))
        start, T = start + T, T * c.restart_mult
    dev = max(abs(v) for v in checks)
    ok = dev <= 1e-12
    record("scheduler closed form", ok, f"warmup start, 3 restarts, 3 mid-segments: max dev {dev:.1e} (<= 1e-12)")
    assert ok


def test_controller():
    t0 = time.perf_counter()
    v0, _ = control_law(0.0, 0.3, 0.5, 1.5)
    _, w = control_law(1.0, math.pi / 4, 0.5, 1.0)
    prm = SimParams(goal_tol=0.05, max_time=60.0)
    reached, worst = 0, 0.0
    for x, y, h in mc_starts(100, 3.0):
        try:
            tr = simulate(np.array([[0.0, 0.0]]), Pose2D(x, y, h), Gains(k_v=0.5, k_omega=1.5), prm)
        except Exception:
            continue
        fp = tr.final_pose
        if tr.success and math.hypot(fp.x, fp.y) < prm.goal_tol:
            reached += 1
            worst = max(worst, tr.rows[-1][0])
    dt = time.perf_counter() - t0
    ok = v0 == 0.0 and abs(w - 1.285398) <= 1e-6 and reached == 100 and dt < 30
    record("controller", ok, f"v at goal {v0}; omega(pi/4, k=1) {w:.6f}; {reached}/100 starts at 3 m reached "
           f"0.05 m (slowest {worst:.2f} s of 60)", dt)
    assert ok


def test_rrt_validity():
    t0 = time.perf_counter()
    g = corridor_grid()
    passed = 0
    for seed in range(50):
        w = rrt_plan(g, CORRIDOR_START, CORRIDOR_GOAL, RRTParams(seed=seed)).waypoints
        if not any(fine_segment_hits(g.state, g.origin, g.cell, a, b) for a, b in zip(w[:-1], w[1:])):
            passed += 1
    try:
        rrt_plan(enclosed_goal_grid(), (1.0, 1.0), (4.5, 4.5), RRTParams(max_iters=2000))
        enclosed = "returned a path"
    except PlanningFailed:
        enclosed = "PlanningFailed"
    dt = time.perf_counter() - t0
    ok = passed == 50 and enclosed == "PlanningFailed" and dt < 30
    record("RRT validity", ok, f"{passed}/50 corridor plans pass the fine recheck; enclosed goal -> {enclosed}", dt)
    assert ok


def _det_run(d: Path) -> dict:
    cmds = [["gen-synth", "--out", str(d / "data"), "--scenes", "10", "--seed", "7"],
            ["train", "--data", str(d / "data"), "--out", str(d / "train"), "--seed", "7",
             "--set", "train.max_epochs=5", "--set", "train.warmup_epochs=1"],
            ["infer", "--ckpt", str(d / "train" / "best.ckpt"), "--scan", str(d / "data" / "velodyne" / "000000.bin"),
             "--out", str(d / "cloud.csv")],
            ["plan", "--cloud", str(d / "cloud.csv"), "--out", str(d / "plan"), "--seed", "7"],
            ["simulate", "--path", str(d / "plan" / "path.csv"), "--out", str(d / "sim")]]
    codes = [main(c) for c in cmds]
    files = {}
    for rel in ("data/velodyne/000003.bin", "data/labels/000003.label", "train/history.csv", "cloud.csv",
                "plan/path.csv", "sim/trajectory.csv"):
        p = d / rel
        files[rel] = p.read_bytes() if p.exists() else None
    return {"codes": codes, "files": files}


def test_determinism(tmp_path):
    t0 = time.perf_counter()
    a, b = _det_run(tmp_path / "a"), _det_run(tmp_path / "b")
    dt = time.perf_counter() - t0
    same = [k for k in a["files"] if a["files"][k] is not None and a["files"][k] == b["files"][k]]
    ok = a["codes"] == b["codes"] == [0] * 5 and len(same) == len(a["files"])
    record("determinism", ok, f"two seeded runs of gen-synth, train (5 epochs), infer, plan, simulate: "
           f"{len(same)}/{len(a['files'])} outputs bit-identical; exit codes {a['codes']}", dt)
    assert ok


def test_end_to_end(pipeline):
    d, codes, times = pipeline
    total = sum(times.values())
    order = ["gen-synth", "train", "infer", "eval", "plan", "simulate"]
    ok = [codes.get(k) for k in order] == [0] * 6 and total < 30 * 60
    rep = json.loads((d / "eval" / "report.json").read_text()) if (d / "eval" / "report.json").exists() else {}
    record("end-to-end smoke", ok, "exit codes " + ", ".join(f"{k}={codes.get(k)}" for k in order)
           + (f"; eval F1 {rep['f1']:.4f} over all 10 scenes" if rep else ""), total)
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
