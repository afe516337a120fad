"""Standalone SVG rendering of a grid, a planned path and a driven trace."""
from __future__ import annotations

from pathlib import Path as _FsPath

import numpy as np

from .grid import BLOCKED, UNKNOWN, TravGrid

_FILL = {BLOCKED: "#444444", UNKNOWN: "#d8d8e8"}


def _runs(row: np.ndarray):
    """(start, length, value) runs of a 1D array."""
    edges = np.flatnonzero(np.diff(row)) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [len(row)]])
    return zip(starts, ends - starts, row[starts])


def _xy(p) -> np.ndarray:
    """(n, 2) positions of a Path, a Trajectory or a plain array."""
    if hasattr(p, "waypoints"):
        p = p.waypoints
    elif hasattr(p, "array"):
        p = p.array()[:, 1:3]
    return np.asarray(p, float)[:, :2]


def overlay_svg(grid: TravGrid | None, path=None, trace=None, start=None, goal=None,
                px_per_m: float = 20.0) -> str:
    """World +y points up in the image. Blocked cells dark, unknown cells pale."""
    pts = [np.zeros((0, 2))]
    for p in (path, trace):
        if p is not None:
            pts.append(_xy(p))
    if grid is not None:
        lo = grid.origin
        hi = grid.origin + np.array(grid.shape) * grid.cell
    else:
        allp = np.vstack(pts)
        lo, hi = allp.min(axis=0) - 1.0, allp.max(axis=0) + 1.0
    w, h = (hi - lo) * px_per_m

    def tx(xy):
        xy = np.atleast_2d(xy)
        return (xy[:, 0] - lo[0]) * px_per_m, (hi[1] - xy[:, 1]) * px_per_m

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1f}" height="{h:.1f}" '
           f'viewBox="0 0 {w:.1f} {h:.1f}">',
           f'<rect width="{w:.1f}" height="{h:.1f}" fill="#ffffff"/>']
    if grid is not None:
        c = grid.cell * px_per_m
        for i in range(grid.shape[0]):
            for j0, n, v in _runs(grid.state[i]):
                if int(v) in _FILL:
                    # column i spans x; cells j0..j0+n span y (flipped)
                    y = (grid.shape[1] - j0 - n) * c
                    out.append(f'<rect x="{i * c:.2f}" y="{y:.2f}" width="{c:.2f}" height="{n * c:.2f}" '
                               f'fill="{_FILL[int(v)]}"/>')
    for p, colour, width in ((path, "#1f77b4", 2.0), (trace, "#d62728", 1.2)):
        if p is None:
            continue
        x, y = tx(_xy(p))
        d = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x, y))
        out.append(f'<polyline points="{d}" fill="none" stroke="{colour}" stroke-width="{width}"/>')
    for p, colour in ((start, "#2ca02c"), (goal, "#ff7f0e")):
        if p is not None:
            x, y = tx(np.asarray(p, float)[:2])
            out.append(f'<circle cx="{x[0]:.2f}" cy="{y[0]:.2f}" r="4" fill="{colour}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_overlay(path_out, *args, **kw):
    _FsPath(path_out).write_text(overlay_svg(*args, **kw))
