"""Rapidly-exploring random tree planner over a :class:`TravGrid`."""
from __future__ import annotations

import pathlib
from dataclasses import dataclass

import numpy as np

from .grid import BLOCKED, UNKNOWN, TravGrid


class PlanningError(RuntimeError):
    pass


class StartBlocked(PlanningError):
    pass


class GoalBlocked(PlanningError):
    pass


class PlanningFailed(PlanningError):
    """Iteration budget exhausted without reaching the goal."""

    def __init__(self, msg, tree=None):
        super().__init__(msg)
        self.tree = tree


@dataclass
class RRTParams:
    step: float = 0.5
    goal_bias: float = 0.1
    max_iters: int = 5000
    goal_tol: float = 0.3
    seed: int = 0
    smooth: bool = True
    unknown_blocked: bool = False


@dataclass
class RRTTree:
    nodes: np.ndarray  # (n, 2)
    parents: np.ndarray  # (n,), -1 for the root

    def chain(self, k: int) -> np.ndarray:
        out = []
        while k >= 0:
            out.append(self.nodes[k])
            k = int(self.parents[k])
        return np.array(out[::-1])


@dataclass
class Path:
    waypoints: np.ndarray  # (n, 2), start first
    tree: RRTTree | None = None
    iterations: int = 0

    def __len__(self):
        return len(self.waypoints)

    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)))

    def to_csv(self, path):
        lines = ["x,y"] + ["%.9g,%.9g" % (x, y) for x, y in self.waypoints]
        pathlib.Path(path).write_text("\n".join(lines) + "\n")


def segment_free(grid: TravGrid, a, b, unknown_blocked: bool = False) -> bool:
    """Collision check of segment ``a -> b``.

    Samples every half cell and additionally tests every cell in the bounding
    box of each pair of consecutive samples, so a segment clipping a blocked
    cell's corner between samples is still caught.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = max(int(np.ceil(np.linalg.norm(b - a) / (0.5 * grid.cell))), 1)
    s = a + np.linspace(0.0, 1.0, n + 1)[:, None] * (b - a)
    ij = grid.to_cell(s)
    lo = np.minimum(ij[:-1], ij[1:])
    hi = np.maximum(ij[:-1], ij[1:])
    cells = [ij]
    for di in (0, 1):
        for dj in (0, 1):
            c = np.column_stack([np.where(di, hi[:, 0], lo[:, 0]), np.where(dj, hi[:, 1], lo[:, 1])])
            cells.append(c)
    c = np.unique(np.vstack(cells), axis=0)
    if not grid.inside(c).all():
        return False
    st = grid.state[c[:, 0], c[:, 1]]
    bad = st == BLOCKED
    if unknown_blocked:
        bad |= st == UNKNOWN
    return not bad.any()


def shortcut(grid: TravGrid, pts: np.ndarray, unknown_blocked: bool = False) -> np.ndarray:
    """Greedy shortcutting: from each kept waypoint jump to the farthest visible one."""
    out = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = len(pts) - 1
        while j > i + 1 and not segment_free(grid, pts[i], pts[j], unknown_blocked):
            j -= 1
        out.append(pts[j])
        i = j
    return np.array(out)


def rrt_plan(grid: TravGrid, start, goal, params: RRTParams | None = None) -> Path:
    """Grow a tree from ``start`` until a node connects to ``goal``.

    Each iteration samples the goal with probability ``goal_bias`` (else a
    uniform point in the grid), steers the nearest node ``step`` toward it
    and keeps the new node if the edge is collision-free. A node within
    ``step`` of the goal (and within ``goal_tol`` after connecting) with a
    free edge to it closes the path.
    """
    params = params or RRTParams()
    start, goal = np.asarray(start, float), np.asarray(goal, float)
    ub = params.unknown_blocked
    if grid.blocked_at(start, ub)[0]:
        raise StartBlocked(f"start {start.tolist()} is on a blocked cell")
    if grid.blocked_at(goal, ub)[0]:
        raise GoalBlocked(f"goal {goal.tolist()} is on a blocked cell")
    rng = np.random.default_rng(params.seed)
    lo = grid.origin
    hi = grid.origin + np.array(grid.shape) * grid.cell
    cap = params.max_iters + 2
    nodes = np.empty((cap, 2))
    parents = np.full(cap, -1, dtype=np.int64)
    nodes[0] = start
    n = 1

    def try_goal(k):
        nonlocal n
        d = np.linalg.norm(goal - nodes[k])
        if d <= max(params.step, params.goal_tol) and segment_free(grid, nodes[k], goal, ub):
            if d > 0:
                nodes[n], parents[n] = goal, k
                n += 1
            return True
        return False

    done = try_goal(0)
    it = 0
    while not done and it < params.max_iters:
        it += 1
        q = goal if rng.random() < params.goal_bias else rng.uniform(lo, hi)
        d2 = np.sum((nodes[:n] - q) ** 2, axis=1)
        k = int(np.argmin(d2))
        dist = np.sqrt(d2[k])
        if dist == 0:
            continue
        new = q if dist <= params.step else nodes[k] + (q - nodes[k]) * (params.step / dist)
        if not segment_free(grid, nodes[k], new, ub):
            continue
        nodes[n], parents[n] = new, k
        n += 1
        done = try_goal(n - 1)
    tree = RRTTree(nodes[:n].copy(), parents[:n].copy())
    if not done:
        raise PlanningFailed(f"no path after {params.max_iters} iterations ({n} nodes)", tree)
    pts = tree.chain(n - 1)
    if params.smooth and len(pts) > 2:
        pts = shortcut(grid, pts, ub)
    return Path(pts, tree, it)
