"""From a scored cloud to a driven trajectory: grid, RRT, Lyapunov controller.

Run:  python demos/navigate.py [out_dir]

Uses the synthetic ground-truth labels as probabilities so the demo does
not depend on a trained model; swap in ``model.predict_points`` for the
real thing. Writes an SVG overlay into ``out_dir`` (default ``demo_out/nav``).
"""
import sys
from pathlib import Path

import numpy as np

from tenext.data import SceneSpec, gen_synthetic_scene
from tenext.nav import (BLOCKED, TRAVERSABLE, UNKNOWN, Gains, GridParams, Pose2D, RRTParams, build_grid, rrt_plan,
                        simulate, write_overlay)

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/nav")
out.mkdir(parents=True, exist_ok=True)

scene = gen_synthetic_scene(3, SceneSpec())
grid = build_grid(scene.points, scene.labels.astype(float), GridParams())
print(f"grid {grid.shape}: {grid.count(BLOCKED)} blocked, {grid.count(UNKNOWN)} unknown cells")

# goal: the free cell nearest (-6, 5); in this scene an obstacle sits across the straight line
free = grid.cell_center(np.argwhere(grid.state == TRAVERSABLE))
start = np.array([0.0, 0.0])
goal = free[np.argmin(np.sum((free - [-6.0, 5.0]) ** 2, axis=1))]
path = rrt_plan(grid, start, goal, RRTParams(seed=1))
print(f"goal ({goal[0]:.2f}, {goal[1]:.2f}). RRT: {path.iterations} iterations, {len(path.tree.nodes)} tree nodes, "
      f"{len(path)} waypoints after shortcutting, {path.length():.2f} m")

# the robot starts facing +x, away from the goal, so the controller has to turn it round
traj = simulate(path, Pose2D(0.0, 0.0, 0.0), Gains(k_v=0.5, k_omega=1.5))
a = traj.array()
print(f"reached goal in {a[-1, 0]:.2f} s; peak |v| {np.abs(a[:, 4]).max():.2f} m/s, "
      f"peak |omega| {np.abs(a[:, 5]).max():.2f} rad/s")
traj.to_csv(out / "trajectory.csv")
write_overlay(out / "navigate.svg", grid, path, traj, start=start, goal=goal)
print(f"overlay written to {out}/navigate.svg")
