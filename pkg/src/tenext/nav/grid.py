"""2D traversability grid built from a scored point cloud."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

TRAVERSABLE = 0
BLOCKED = 1
UNKNOWN = 2


@dataclass
class GridParams:
    cell: float = 0.1
    p_block: float = 0.5
    inflation: float = 0.35
    # height window above the local ground, and the tile used to estimate that ground
    z_min: float = -0.5
    z_max: float = 2.0
    ground_tile: float = 1.0
    margin: float = 0.5


@dataclass
class TravGrid:
    origin: np.ndarray  # world (x, y) of the lower-left corner of cell (0, 0)
    cell: float
    state: np.ndarray  # (nx, ny) int8 of TRAVERSABLE / BLOCKED / UNKNOWN
    source: np.ndarray | None = None  # blocked before inflation

    @property
    def shape(self):
        return self.state.shape

    def to_cell(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        return np.floor((xy - self.origin) / self.cell).astype(np.int64)

    def cell_center(self, ij) -> np.ndarray:
        return self.origin + (np.asarray(ij, dtype=np.float64) + 0.5) * self.cell

    def inside(self, ij) -> np.ndarray:
        ij = np.atleast_2d(ij)
        return (ij >= 0).all(axis=1) & (ij[:, 0] < self.shape[0]) & (ij[:, 1] < self.shape[1])

    def blocked_at(self, xy, unknown_blocked: bool = False) -> np.ndarray:
        """True for world points on blocked cells (or outside the grid)."""
        ij = np.atleast_2d(self.to_cell(xy))
        out = np.ones(len(ij), dtype=bool)
        ok = self.inside(ij)
        st = self.state[ij[ok, 0], ij[ok, 1]]
        out[ok] = (st == BLOCKED) | ((st == UNKNOWN) if unknown_blocked else False)
        return out

    def count(self, state: int) -> int:
        return int(np.sum(self.state == state))

    @classmethod
    def empty(cls, size_x: float, size_y: float, cell: float = 0.1, origin=(0.0, 0.0)) -> "TravGrid":
        nx, ny = int(round(size_x / cell)), int(round(size_y / cell))
        return cls(np.asarray(origin, dtype=np.float64), cell, np.zeros((nx, ny), dtype=np.int8))


def disk(radius_cells: float) -> np.ndarray:
    r = int(np.floor(radius_cells))
    i, j = np.mgrid[-r:r + 1, -r:r + 1]
    return np.hypot(i, j) <= radius_cells + 1e-9


def inflate(blocked: np.ndarray, radius: float, cell: float) -> np.ndarray:
    """Cells whose center lies within ``radius`` of a blocked cell's center."""
    if radius <= 0 or not blocked.any():
        return blocked.copy()
    return ndimage.binary_dilation(blocked, structure=disk(radius / cell))


def build_grid(points, probabilities, params: GridParams | None = None, bounds=None) -> TravGrid:
    """Project scored points onto a grid.

    A cell is blocked when any kept point in it scores below ``p_block``,
    traversable when it has kept points and none do, and unknown otherwise.
    Blocked cells are then inflated by ``params.inflation``. ``bounds`` is
    ``(xmin, ymin, xmax, ymax)``; by default the cloud's extent plus margin.
    """
    params = params or GridParams()
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    p = np.asarray(probabilities, dtype=np.float64).ravel()
    if len(pts) == 0:
        raise ValueError("build_grid needs a non-empty cloud")
    if len(p) != len(pts):
        raise ValueError(f"{len(p)} probabilities for {len(pts)} points")
    if bounds is None:
        lo = pts[:, :2].min(axis=0) - params.margin
        hi = pts[:, :2].max(axis=0) + params.margin
    else:
        lo, hi = np.asarray(bounds[:2], float), np.asarray(bounds[2:], float)
    size = hi - lo
    if not (np.all(size > 0) and np.all(np.isfinite(size))) or params.cell <= 0:
        raise ValueError(f"degenerate grid bounds {lo.tolist()} .. {hi.tolist()}")
    n = np.maximum(np.ceil(size / params.cell).astype(np.int64), 1)
    grid = TravGrid(lo, params.cell, np.full(tuple(n), UNKNOWN, dtype=np.int8))

    # local ground: lowest z in each ground tile
    tile = np.floor((pts[:, :2] - lo) / params.ground_tile).astype(np.int64)
    tkey = tile[:, 0] * (int(tile[:, 1].max()) + 1) + tile[:, 1]
    uniq, inv = np.unique(tkey, return_inverse=True)
    gmin = np.full(len(uniq), np.inf)
    np.minimum.at(gmin, inv, pts[:, 2])
    h = pts[:, 2] - gmin[inv]
    ij = grid.to_cell(pts[:, :2])
    keep = (h >= params.z_min) & (h <= params.z_max) & grid.inside(ij)
    ij, pk = ij[keep], p[keep]
    grid.state[ij[:, 0], ij[:, 1]] = TRAVERSABLE
    src = np.zeros(grid.shape, dtype=bool)
    low = pk < params.p_block
    src[ij[low, 0], ij[low, 1]] = True
    grid.state[inflate(src, params.inflation, params.cell)] = BLOCKED
    grid.source = src
    return grid
