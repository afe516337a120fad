"""Kinematic unicycle simulation of waypoint tracking."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import Gains, Pose2D, control_step, wrap_angle


class SimulationTimeout(RuntimeError):
    def __init__(self, msg, trajectory):
        super().__init__(msg)
        self.trajectory = trajectory


@dataclass
class SimParams:
    dt: float = 0.05
    capture_radius: float = 0.3
    goal_tol: float = 0.05
    max_time: float = 60.0

    def __post_init__(self):
        if not 0 < self.dt <= 0.1:
            raise ValueError(f"dt must be in (0, 0.1], got {self.dt}")


@dataclass
class Trajectory:
    rows: list = field(default_factory=list)  # (t, x, y, theta, v, omega)
    success: bool = False
    waypoint_index: list = field(default_factory=list)

    def array(self) -> np.ndarray:
        return np.array(self.rows, dtype=np.float64).reshape(-1, 6)

    @property
    def final_pose(self) -> Pose2D:
        t, x, y, th, _, _ = self.rows[-1]
        return Pose2D(x, y, th)

    def csv(self) -> str:
        lines = ["t,x,y,theta,v,omega"]
        lines += ["%.6f,%.9g,%.9g,%.9g,%.9g,%.9g" % tuple(r) for r in self.rows]
        return "\n".join(lines) + "\n"

    def to_csv(self, path):
        Path(path).write_text(self.csv())


def simulate(path, start: Pose2D, gains: Gains | None = None, params: SimParams | None = None) -> Trajectory:
    """Track ``path`` waypoints from ``start``.

    The current target advances once the robot is within ``capture_radius``
    of it; the run succeeds when the robot is within ``goal_tol`` of the final
    waypoint and raises :class:`SimulationTimeout` after ``max_time``.
    Each logged row holds its state and the command applied from it; the last
    row's command is zero.
    """
    gains = gains or Gains()
    params = params or SimParams()
    wps = np.asarray(getattr(path, "waypoints", path), dtype=np.float64).reshape(-1, 2)
    if len(wps) == 0:
        raise ValueError("empty path")
    x, y, th = float(start.x), float(start.y), float(start.theta)
    k = 0
    traj = Trajectory()
    n_steps = int(round(params.max_time / params.dt))
    for step in range(n_steps + 1):
        t = step * params.dt
        while k < len(wps) - 1 and math.hypot(wps[k, 0] - x, wps[k, 1] - y) < params.capture_radius:
            k += 1
        if k == len(wps) - 1 and math.hypot(wps[k, 0] - x, wps[k, 1] - y) < params.goal_tol:
            traj.rows.append((t, x, y, th, 0.0, 0.0))
            traj.waypoint_index.append(k)
            traj.success = True
            return traj
        if step == n_steps:
            traj.rows.append((t, x, y, th, 0.0, 0.0))
            traj.waypoint_index.append(k)
            break
        cmd = control_step(Pose2D(x, y, th), (wps[k, 0], wps[k, 1]), gains)
        traj.rows.append((t, x, y, th, cmd.v, cmd.omega))
        traj.waypoint_index.append(k)
        x += cmd.v * math.cos(th) * params.dt
        y += cmd.v * math.sin(th) * params.dt
        th = wrap_angle(th + cmd.omega * params.dt)
    raise SimulationTimeout(f"goal not reached within {params.max_time} s", traj)
