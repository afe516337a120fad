"""Sparse voxel tensors, coordinate maps and kernel maps.

Coordinates are stored as an ``(N, 4)`` int64 array of ``(b, x, y, z)``
rows, sorted lexicographically, so row order is a pure function of the
coordinate set. A coordinate at tensor stride ``s`` is an integer multiple of
``s`` on every spatial axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .autograd import Tensor

# packed key layout: 15 bits batch | 16 bits per spatial axis (offset binary)
_AXIS_BITS = 16
_AXIS_OFF = 1 << (_AXIS_BITS - 1)
COORD_LIMIT = _AXIS_OFF - 1024  # leaves head-room for kernel offsets
MAX_BATCH = 1 << 15
_DENSE_LIMIT = 1 << 24  # max cells of a dense lookup table


class CoordinateError(ValueError):
    pass


def pack_coords(coords: np.ndarray) -> np.ndarray:
    """Injective, order-preserving int64 key for in-range ``(b, x, y, z)`` rows."""
    c = np.asarray(coords, dtype=np.int64)
    k = c[:, 0]
    for axis in (1, 2, 3):
        k = (k << _AXIS_BITS) | (c[:, axis] + _AXIS_OFF)
    return k


def _in_range(coords: np.ndarray) -> np.ndarray:
    sp = coords[:, 1:]
    return (np.abs(sp) <= COORD_LIMIT).all(axis=1) & (coords[:, 0] >= 0) & (coords[:, 0] < MAX_BATCH)


def sort_unique(coords: np.ndarray):
    """Return sorted unique rows plus, for each input row, its row in the result."""
    coords = np.asarray(coords, dtype=np.int64)
    if not _in_range(coords).all():
        bad = int(np.flatnonzero(~_in_range(coords))[0])
        raise CoordinateError(f"voxel coordinate out of supported range at row {bad}: {coords[bad].tolist()}")
    keys = pack_coords(coords)
    uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    return coords[first], inverse.reshape(-1)


class CoordMap:
    """Immutable sorted coordinate set with row lookup."""

    def __init__(self, coords: np.ndarray, stride: int, key: str):
        coords = np.ascontiguousarray(coords, dtype=np.int64)
        if coords.ndim != 2 or coords.shape[1] != 4:
            raise CoordinateError("coordinates must be an (N, 4) array of (b, x, y, z)")
        self.coords = coords
        self.coords.setflags(write=False)
        self.stride = int(stride)
        self.key = key
        self._keys = pack_coords(coords)
        if len(self._keys) > 1 and not np.all(np.diff(self._keys) > 0):
            raise CoordinateError("coordinate map rows must be sorted and unique")
        self._dict = None
        self._dense = {}

    def __len__(self):
        return len(self.coords)

    def row(self, coord) -> int:
        """Row of a single ``(b, x, y, z)``; raises ``KeyError`` if absent."""
        if self._dict is None:
            self._dict = {k: i for i, k in enumerate(self._keys.tolist())}
        return self._dict[int(pack_coords(np.asarray([coord]))[0])]

    def lookup(self, query: np.ndarray) -> np.ndarray:
        """Rows of each query coordinate, -1 where absent."""
        query = np.asarray(query, dtype=np.int64).reshape(-1, 4)
        out = np.full(len(query), -1, dtype=np.int64)
        if len(self) == 0 or len(query) == 0:
            return out
        ok = _in_range(query)
        qk = pack_coords(query[ok])
        pos = np.searchsorted(self._keys, qk)
        pos = np.minimum(pos, len(self._keys) - 1)
        hit = self._keys[pos] == qk
        res = np.where(hit, pos, -1)
        out[ok] = res
        return out

    def dense_table(self, pad: int):
        """Dense row table over the bounding box (in stride units), padded by ``pad`` cells.

        Returns ``(table, origin, dims)`` or ``None`` if the box is too large.
        """
        if pad in self._dense:
            return self._dense[pad]
        s = self.stride
        b = self.coords[:, 0]
        sp = self.coords[:, 1:] // s
        lo = sp.min(axis=0) - pad
        hi = sp.max(axis=0) + pad
        dims = np.concatenate([[b.max() + 1], hi - lo + 1]).astype(np.int64)
        if np.prod(dims, dtype=np.float64) > _DENSE_LIMIT:
            self._dense[pad] = None
            return None
        table = np.full(int(np.prod(dims)), -1, dtype=np.int64)
        flat = _flat_index(np.column_stack([b, sp - lo]), dims)
        table[flat] = np.arange(len(self))
        self._dense[pad] = (table, lo, dims)
        return self._dense[pad]


def _flat_index(cells: np.ndarray, dims: np.ndarray) -> np.ndarray:
    return ((cells[:, 0] * dims[1] + cells[:, 1]) * dims[2] + cells[:, 2]) * dims[3] + cells[:, 3]


@dataclass
class KernelMap:
    """Per-offset ``(in_row, out_row)`` pairs linking two coordinate maps.

    ``offsets`` are in units of the input stride; offset ``k`` connects
    ``in_rows[k][j]`` to ``out_rows[k][j]``.
    """

    offsets: np.ndarray
    in_rows: list
    out_rows: list
    n_in: int
    n_out: int

    @property
    def volume(self) -> int:
        return len(self.offsets)

    def n_pairs(self) -> int:
        return int(sum(len(r) for r in self.out_rows))

    def transposed(self) -> "KernelMap":
        """Same taps with input and output roles swapped."""
        return KernelMap(self.offsets, self.out_rows, self.in_rows, self.n_out, self.n_in)


def kernel_offsets(kernel_size: int, centered: bool = True) -> np.ndarray:
    """All taps of a cubic kernel, x varying fastest, then y, then z."""
    r = np.arange(kernel_size) - (kernel_size - 1) // 2 if centered else np.arange(kernel_size)
    return np.array([(dx, dy, dz) for dz, dy, dx in product(r, r, r)], dtype=np.int64)


class CoordinateManager:
    """Registry of coordinate maps and the kernel maps between them.

    Maps are immutable once registered. Derived maps and kernel maps are
    cached, so asking twice returns the same object.
    """

    def __init__(self):
        self.maps: dict[str, CoordMap] = {}
        self._derived: dict[tuple, str] = {}
        self._kmaps: dict[tuple, KernelMap] = {}

    def register(self, coords: np.ndarray, stride: int = 1, key: str | None = None) -> str:
        key = key or f"m{len(self.maps)}"
        if key in self.maps:
            raise CoordinateError(f"map key {key!r} already registered")
        self.maps[key] = CoordMap(coords, stride, key)
        return key

    def get(self, key: str) -> CoordMap:
        try:
            return self.maps[key]
        except KeyError:
            raise KeyError(f"unknown coordinate map {key!r}") from None

    def stride_of(self, key: str) -> int:
        return self.get(key).stride

    def downsample(self, key: str, factor: int = 2) -> str:
        """Register (once) the floor-to-stride coarsening of map ``key``."""
        if factor < 2:
            raise ValueError(f"downsample factor must be >= 2, got {factor}")
        parent = self.get(key)
        cache = (key, factor)
        if cache in self._derived:
            return self._derived[cache]
        s = parent.stride * factor
        c = parent.coords.copy()
        c[:, 1:] = np.floor_divide(c[:, 1:], s) * s
        uniq, _ = sort_unique(c)
        new_key = self.register(uniq, stride=s, key=f"{key}/d{factor}")
        self._derived[cache] = new_key
        return new_key

    def find_map(self, stride: int) -> str:
        """Key of the first registered map at ``stride`` (the encoder map for skips)."""
        for k, m in self.maps.items():
            if m.stride == stride:
                return k
        raise KeyError(f"no coordinate map registered at stride {stride}")

    def kernel_map(self, in_key: str, out_key: str, kernel_size: int, dilation: int = 1) -> KernelMap:
        cache = ("c", in_key, out_key, kernel_size, dilation)
        if cache not in self._kmaps:
            self._kmaps[cache] = build_kernel_map(self.get(in_key), self.get(out_key), kernel_size, dilation)
        return self._kmaps[cache]

    def strided_kernel_map(self, in_key: str, out_key: str, factor: int) -> KernelMap:
        cache = ("s", in_key, out_key, factor)
        if cache not in self._kmaps:
            self._kmaps[cache] = build_strided_kernel_map(self.get(in_key), self.get(out_key), factor)
        return self._kmaps[cache]


def build_kernel_map(in_map: CoordMap, out_map: CoordMap, kernel_size: int, dilation: int = 1) -> KernelMap:
    """Centered odd kernel: output ``o`` reads input ``o + offset * dilation * stride_in``."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError("kernel size must be odd")
    offsets = kernel_offsets(kernel_size)
    s = in_map.stride
    out_c = out_map.coords
    n_out = len(out_map)
    in_rows, out_rows = [], []
    all_out = np.arange(n_out, dtype=np.int64)
    pad = (kernel_size // 2) * dilation
    dense = None
    if n_out and len(in_map) and not (out_c[:, 1:] % s).any():
        # table padded by 2*pad so any output within pad of the box indexes safely
        dense = in_map.dense_table(2 * pad)
    if dense is not None:
        table, lo, dims = dense
        cells = np.column_stack([out_c[:, 0], out_c[:, 1:] // s - lo])
        inside = (cells[:, 0] < dims[0]) & (cells[:, 1:] >= pad).all(axis=1) & (cells[:, 1:] < dims[1:] - pad).all(axis=1)
        base = _flat_index(cells[inside], dims)
        cand = all_out[inside]
        step = np.array([dims[2] * dims[3], dims[3], 1], dtype=np.int64)
        for off in offsets:
            rows = table[base + int(off @ step) * dilation]
            hit = rows >= 0
            in_rows.append(rows[hit])
            out_rows.append(cand[hit])
    else:
        for off in offsets:
            q = out_c.copy()
            q[:, 1:] += off * dilation * s
            rows = in_map.lookup(q)
            hit = rows >= 0
            in_rows.append(rows[hit])
            out_rows.append(all_out[hit])
    return KernelMap(offsets, in_rows, out_rows, len(in_map), n_out)


def build_strided_kernel_map(in_map: CoordMap, out_map: CoordMap, factor: int) -> KernelMap:
    """Non-overlapping kernel of size ``factor`` with stride ``factor``.

    Every input voxel feeds exactly one output voxel (its floor-to-stride
    parent) through the tap given by its position inside the parent cell.
    """
    s = in_map.stride
    so = s * factor
    if out_map.stride != so:
        raise CoordinateError(f"output map stride {out_map.stride} != {s}*{factor}")
    offsets = kernel_offsets(factor, centered=False)
    c = in_map.coords
    parent = c.copy()
    parent[:, 1:] = np.floor_divide(c[:, 1:], so) * so
    out = out_map.lookup(parent)
    if (out < 0).any():
        raise CoordinateError("output map is not the downsampling of the input map")
    local = (c[:, 1:] - parent[:, 1:]) // s
    tap = local[:, 0] + factor * (local[:, 1] + factor * local[:, 2])
    order = np.argsort(tap, kind="stable")
    bounds = np.searchsorted(tap[order], np.arange(len(offsets) + 1))
    rows_in = np.arange(len(c), dtype=np.int64)[order]
    out = out[order]
    in_rows = [rows_in[bounds[k]:bounds[k + 1]] for k in range(len(offsets))]
    out_rows = [out[bounds[k]:bounds[k + 1]] for k in range(len(offsets))]
    return KernelMap(offsets, in_rows, out_rows, len(in_map), len(out_map))


@dataclass
class SparseTensor:
    """Features attached to the rows of one registered coordinate map."""

    feats: Tensor
    map_key: str
    manager: CoordinateManager
    inverse: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not isinstance(self.feats, Tensor):
            self.feats = Tensor(self.feats)
        if self.feats.data.ndim != 2:
            raise ValueError("features must be an (N, C) matrix")
        n = len(self.manager.get(self.map_key))
        if self.feats.shape[0] != n:
            raise ValueError(f"{self.feats.shape[0]} feature rows for {n} coordinates")

    @property
    def coords(self) -> np.ndarray:
        return self.manager.get(self.map_key).coords

    @property
    def stride(self) -> int:
        return self.manager.stride_of(self.map_key)

    @property
    def F(self) -> np.ndarray:
        return self.feats.data

    @property
    def n_channels(self) -> int:
        return self.feats.shape[1]

    def __len__(self):
        return self.feats.shape[0]

    def replace(self, feats: Tensor) -> "SparseTensor":
        """Same coordinates, new features."""
        return SparseTensor(feats, self.map_key, self.manager, self.inverse)


def _check_points(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError("points must be an (N, 3) array")
    if len(points) == 0:
        raise ValueError("empty cloud")
    finite = np.isfinite(points).all(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise ValueError(f"non-finite coordinate at row {bad}: {points[bad].tolist()}")
    return points


def _check_finite_features(feats: np.ndarray):
    if feats.ndim != 2 or feats.shape[1] < 1:
        raise ValueError("features must be an (N, C) matrix with C >= 1")
    ok = np.isfinite(feats).all(axis=1)
    if not ok.all():
        raise ValueError(f"non-finite feature at row {int(np.flatnonzero(~ok)[0])}")


def voxelize(points, scale: float) -> np.ndarray:
    """Integer voxel indices ``floor(points / scale)``."""
    if not scale > 0:
        raise ValueError(f"quantization scale must be positive, got {scale}")
    return np.floor(_check_points(points) / scale).astype(np.int64)


def quantize(points, features=None, scale: float = 0.2, batch_index=0,
             manager: CoordinateManager | None = None, dtype=np.float32) -> SparseTensor:
    """Voxelize a cloud (or a batch of clouds) into a stride-1 sparse tensor.

    Points sharing a voxel collapse to one row whose features are the mean of
    theirs. ``batch_index`` is a scalar or a per-point array. The returned
    tensor's ``inverse`` maps each input point to its voxel row.
    """
    vox = voxelize(points, scale)
    n = len(vox)
    b = np.broadcast_to(np.asarray(batch_index, dtype=np.int64), (n,))
    coords, inverse = sort_unique(np.column_stack([b, vox]))
    if features is None:
        features = np.ones((n, 1))
    features = np.asarray(features, dtype=np.float64).reshape(n, -1)
    _check_finite_features(features)
    counts = np.bincount(inverse, minlength=len(coords)).astype(np.float64)
    feats = np.empty((len(coords), features.shape[1]))
    for c in range(features.shape[1]):
        feats[:, c] = np.bincount(inverse, weights=features[:, c], minlength=len(coords)) / counts
    manager = manager or CoordinateManager()
    key = manager.register(coords, stride=1)
    return SparseTensor(Tensor(feats.astype(dtype)), key, manager, inverse)


def quantize_batch(clouds, scale: float, dtype=np.float32) -> SparseTensor:
    """Stack several point clouds into one tensor, cloud ``i`` at batch index ``i``."""
    pts = np.concatenate([np.asarray(c, dtype=np.float64) for c in clouds])
    b = np.concatenate([np.full(len(c), i) for i, c in enumerate(clouds)])
    return quantize(pts, None, scale, b, dtype=dtype)


def from_coords(coords, feats, stride: int = 1, manager: CoordinateManager | None = None) -> SparseTensor:
    """Build a tensor from explicit ``(b, x, y, z)`` coordinates (sorted on the way in)."""
    coords = np.asarray(coords, dtype=np.int64)
    if coords.shape[1] == 3:
        coords = np.column_stack([np.zeros(len(coords), np.int64), coords])
    uniq, inverse = sort_unique(coords)
    if len(uniq) != len(coords):
        raise CoordinateError("duplicate coordinates")
    feats = feats.data if isinstance(feats, Tensor) else np.asarray(feats)
    _check_finite_features(feats)
    order = np.empty(len(coords), dtype=np.int64)
    order[inverse] = np.arange(len(coords))
    manager = manager or CoordinateManager()
    key = manager.register(uniq, stride=stride)
    return SparseTensor(Tensor(feats[order]), key, manager, inverse)


def ones_features(cloud: SparseTensor) -> SparseTensor:
    """Same coordinates with an (N, 1) matrix of ones as features."""
    return cloud.replace(Tensor(np.ones((len(cloud), 1), dtype=cloud.feats.dtype)))


def dequantize(voxels: np.ndarray, scale: float) -> np.ndarray:
    """Voxel centers in meters."""
    return (np.asarray(voxels, dtype=np.float64) + 0.5) * scale
