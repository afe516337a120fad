"""KITTI-format scan/label I/O, traversability remapping and synthetic scenes.

On-disk formats:

* scan: packed little-endian float32 ``(x, y, z, intensity)`` per point
* label: packed little-endian uint32 per point; semantic id in the low
  16 bits, instance id in the high 16 bits
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

SCAN_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u4")

# raw ids written by the synthetic generator (SemanticKITTI numbering)
SYNTH_IDS = {"ground": 72, "box": 50, "cylinder": 71, "dome": 70}


class FormatError(ValueError):
    pass


@dataclass
class LabeledCloud:
    points: np.ndarray
    intensity: np.ndarray | None = None
    labels: np.ndarray | None = None
    raw_semantic: np.ndarray | None = None
    instance: np.ndarray | None = None
    obstacles: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        for name in ("intensity", "labels", "raw_semantic"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise ValueError(f"{name} has {len(arr)} entries for {n} points")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.uint8)
            if not np.isin(self.labels, (0, 1)).all():
                raise ValueError("labels must be 0 or 1")

    def __len__(self):
        return len(self.points)


# ---------------------------------------------------------------------------
# binary formats


def write_scan(path, points, intensity=None):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if intensity is None:
        intensity = np.zeros(len(points))
    rec = np.column_stack([points, intensity]).astype(SCAN_DTYPE)
    Path(path).write_bytes(rec.tobytes())


def read_scan(path) -> LabeledCloud:
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of 16 bytes")
    rec = np.frombuffer(raw, dtype=SCAN_DTYPE).reshape(-1, 4)
    return LabeledCloud(points=rec[:, :3].astype(np.float64), intensity=rec[:, 3].astype(np.float64))


def write_labels(path, semantic, instance=None):
    semantic = np.asarray(semantic, dtype=np.uint32)
    if (semantic > 0xFFFF).any():
        raise ValueError("semantic ids must fit in 16 bits")
    inst = np.zeros_like(semantic) if instance is None else np.asarray(instance, dtype=np.uint32)
    Path(path).write_bytes(((inst << 16) | semantic).astype(LABEL_DTYPE).tobytes())


def read_labels(path, n_points: int | None = None) -> np.ndarray:
    """Raw semantic ids (low 16 bits) of a label file."""
    raw = Path(path).read_bytes()
    if len(raw) % 4:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of 4 bytes")
    lab = np.frombuffer(raw, dtype=LABEL_DTYPE)
    if n_points is not None and len(lab) != n_points:
        raise FormatError(f"{path}: {len(lab)} labels for {n_points} points (count mismatch)")
    return (lab & 0xFFFF).astype(np.uint32)


# ---------------------------------------------------------------------------
# remapping


@dataclass(frozen=True)
class RemapTable:
    dataset_name: str
    traversable_ids: frozenset

    @classmethod
    def parse(cls, text: str) -> "RemapTable":
        tokens = []
        for line in text.splitlines():
            tokens += line.split("#", 1)[0].split()
        if not tokens:
            raise FormatError("remap table is empty")
        try:
            ids = frozenset(int(t) for t in tokens[1:])
        except ValueError as e:
            raise FormatError(f"remap table {tokens[0]!r}: {e}") from None
        return cls(tokens[0], ids)

    @classmethod
    def load(cls, name_or_path) -> "RemapTable":
        """Load a bundled table by dataset name, or any table file by path."""
        p = Path(name_or_path)
        if p.suffix == ".txt" or p.exists():
            return cls.parse(p.read_text())
        ref = resources.files("tenext") / "remaps" / f"{name_or_path}.txt"
        if not ref.is_file():
            raise FileNotFoundError(f"no bundled remap table {name_or_path!r}")
        return cls.parse(ref.read_text())

    def dumps(self) -> str:
        return f"{self.dataset_name}\n{' '.join(str(i) for i in sorted(self.traversable_ids))}\n"


def remap(raw_ids, table: RemapTable) -> np.ndarray:
    """1 where the raw id is traversable, else 0 (unknown ids included)."""
    raw = np.asarray(raw_ids)
    return np.isin(raw, np.fromiter(table.traversable_ids, dtype=np.int64)).astype(np.uint8)


def load_labeled(scan_path, label_path, table: RemapTable) -> LabeledCloud:
    cloud = read_scan(scan_path)
    raw = read_labels(label_path, len(cloud))
    return LabeledCloud(cloud.points, cloud.intensity, remap(raw, table), raw)


def voxel_labels(inverse: np.ndarray, labels: np.ndarray, n_voxels: int) -> np.ndarray:
    """Majority point label per voxel; an exact tie goes to non-traversable."""
    pos = np.bincount(inverse, weights=labels.astype(np.float64), minlength=n_voxels)
    tot = np.bincount(inverse, minlength=n_voxels)
    return (2 * pos > tot).astype(np.uint8)


# ---------------------------------------------------------------------------
# dataset directories


def write_corpus(out_dir, scenes, remap_name="semantickitti", meta=None) -> Path:
    """Write scenes as ``velodyne/NNNNNN.bin`` + ``labels/NNNNNN.label`` plus ``manifest.json``."""
    out = Path(out_dir)
    (out / "velodyne").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    ids = []
    for i, sc in enumerate(scenes):
        sid = f"{i:06d}"
        write_scan(out / "velodyne" / f"{sid}.bin", sc.points, sc.intensity)
        write_labels(out / "labels" / f"{sid}.label", sc.raw_semantic, sc.instance)
        ids.append(sid)
    manifest = {"format": "kitti", "remap": remap_name, "scenes": ids}
    manifest.update(meta or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out


def read_corpus(data_dir) -> tuple[list[LabeledCloud], dict]:
    d = Path(data_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"data directory {d} does not exist")
    mpath = d / "manifest.json"
    if mpath.exists():
        manifest = json.loads(mpath.read_text())
        ids = manifest["scenes"]
    else:
        manifest = {"remap": "semantickitti"}
        ids = sorted(p.stem for p in (d / "velodyne").glob("*.bin"))
    table = RemapTable.load(manifest.get("remap", "semantickitti"))
    scenes = [load_labeled(d / "velodyne" / f"{s}.bin", d / "labels" / f"{s}.label", table) for s in ids]
    if not scenes:
        raise FileNotFoundError(f"no scans found under {d}")
    return scenes, manifest


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass
class SceneSpec:
    """Desk-scale scene: ground square of half-width ``extent`` plus obstacles.

    ``sampling="lidar"`` ray-casts ``n_rings`` x ``n_points / n_rings`` beams
    between ``fov_down`` and ``fov_up`` degrees from a sensor
    ``sensor_height`` above the ground at the origin; beams that leave the
    scene square without a hit are dropped, so fewer than ``n_points`` return.
    ``sampling="surface"`` draws points uniformly by surface area.
    """

    extent: float = 12.0
    n_points: int = 26000
    n_obstacles: int = 25
    max_slope: float = 0.05
    sensor_height: float = 1.5
    n_rings: int = 32
    fov_down: float = -30.0
    fov_up: float = 3.0
    sampling: str = "lidar"
    range_noise: float = 0.01

    def validate(self):
        if not (self.extent > 0 and math.isfinite(self.extent)) or self.extent < 2.0:
            raise ValueError(f"degenerate extent {self.extent}")
        if self.n_points < 1 or self.n_obstacles < 0:
            raise ValueError("n_points must be >= 1 and n_obstacles >= 0")
        if self.sampling not in ("lidar", "surface"):
            raise ValueError(f"unknown sampling {self.sampling!r}")


@dataclass
class Obstacle:
    kind: str  # box | cylinder | dome
    cx: float
    cy: float
    base: float
    size: tuple  # box: (hx, hy, h); cylinder: (r, h); dome: (r,)

    @property
    def footprint_radius(self) -> float:
        if self.kind == "box":
            return math.hypot(self.size[0], self.size[1])
        return self.size[0]


def _place_obstacles(rng, spec: SceneSpec, ground):
    obs = []
    tries = 0
    while len(obs) < spec.n_obstacles and tries < 200 * max(spec.n_obstacles, 1):
        tries += 1
        kind = ("box", "cylinder", "dome")[rng.integers(3)]
        if kind == "box":
            size = (rng.uniform(0.3, 1.2), rng.uniform(0.3, 1.2), rng.uniform(0.5, 2.5))
        elif kind == "cylinder":
            size = (rng.uniform(0.15, 0.5), rng.uniform(1.0, 3.0))
        else:
            size = (rng.uniform(0.4, 1.2),)
        lim = spec.extent * 0.85
        cx, cy = rng.uniform(-lim, lim, 2)
        o = Obstacle(kind, float(cx), float(cy), 0.0, size)
        r = o.footprint_radius
        if math.hypot(cx, cy) < r + 2.0 or max(abs(cx), abs(cy)) + r > spec.extent:
            continue
        if any(math.hypot(cx - p.cx, cy - p.cy) < r + p.footprint_radius + 0.3 for p in obs):
            continue
        o.base = float(ground(cx, cy))
        obs.append(o)
    return obs


def _ray_hits(origin, dirs, gx, gy, obstacles):
    """Distance along each unit ray to the first surface and the hit id (-1 ground, k obstacle)."""
    n = len(dirs)
    ox, oy, oz = origin
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    best = np.full(n, np.inf)
    hit = np.full(n, -2, dtype=np.int64)
    denom = gx * dx + gy * dy - dz
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (oz - gx * ox - gy * oy) / denom
    ok = (denom > 1e-9) & (t > 0)
    best[ok] = t[ok]
    hit[ok] = -1
    for k, o in enumerate(obstacles):
        if o.kind == "box":
            hx, hy, h = o.size
            lo = np.array([o.cx - hx, o.cy - hy, o.base - 0.5])
            hi = np.array([o.cx + hx, o.cy + hy, o.base + h])
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (lo[None, :] - np.asarray(origin)[None, :]) / dirs
                t2 = (hi[None, :] - np.asarray(origin)[None, :]) / dirs
            tn = np.nanmax(np.minimum(t1, t2), axis=1)
            tf = np.nanmin(np.maximum(t1, t2), axis=1)
            tk = np.where((tn <= tf) & (tn > 0), tn, np.inf)
        elif o.kind == "cylinder":
            r, h = o.size
            px, py = ox - o.cx, oy - o.cy
            a = dx * dx + dy * dy
            b = 2 * (px * dx + py * dy)
            c = px * px + py * py - r * r
            disc = b * b - 4 * a * c
            with np.errstate(invalid="ignore", divide="ignore"):
                ts = (-b - np.sqrt(disc)) / (2 * a)
            z = oz + ts * dz
            side = (disc >= 0) & (ts > 0) & (z >= o.base - 0.5) & (z <= o.base + h)
            with np.errstate(divide="ignore", invalid="ignore"):
                tc = (o.base + h - oz) / dz
            cap = (tc > 0) & ((px + tc * dx) ** 2 + (py + tc * dy) ** 2 <= r * r)
            tk = np.minimum(np.where(side, ts, np.inf), np.where(cap, tc, np.inf))
        else:
            r = o.size[0]
            p = np.array([ox - o.cx, oy - o.cy, oz - o.base])
            b = 2 * dirs @ p
            c = p @ p - r * r
            disc = b * b - 4 * c
            with np.errstate(invalid="ignore"):
                ts = (-b - np.sqrt(disc)) / 2
            z = oz + ts * dz
            tk = np.where((disc >= 0) & (ts > 0) & (z >= o.base), ts, np.inf)
        closer = tk < best
        best[closer] = tk[closer]
        hit[closer] = k
    return best, hit


def _obstacle_area(o: Obstacle) -> float:
    if o.kind == "box":
        hx, hy, h = o.size
        return 2 * (2 * hx + 2 * hy) * h + 4 * hx * hy
    if o.kind == "cylinder":
        r, h = o.size
        return 2 * math.pi * r * h + math.pi * r * r
    return 2 * math.pi * o.size[0] ** 2


def _footprint_area(o: Obstacle) -> float:
    if o.kind == "box":
        return 4 * o.size[0] * o.size[1]
    return math.pi * o.size[0] ** 2


def _sample_surface(rng, o: Obstacle, n: int) -> np.ndarray:
    if o.kind == "box":
        hx, hy, h = o.size
        # faces: +x, -x, +y, -y, top
        faces = np.array([2 * hy * h, 2 * hy * h, 2 * hx * h, 2 * hx * h, 4 * hx * hy])
        f = rng.choice(5, size=n, p=faces / faces.sum())
        u, v, w = rng.uniform(-1, 1, n), rng.uniform(-1, 1, n), rng.uniform(0, 1, n)
        x = np.select([f == 0, f == 1], [hx, -hx], u * hx)
        y = np.select([f < 2, f == 2, f == 3], [u * hy, hy, -hy], v * hy)
        z = np.where(f == 4, h, w * h)
        return np.column_stack([o.cx + x, o.cy + y, o.base + z])
    if o.kind == "cylinder":
        r, h = o.size
        side = rng.random(n) < (2 * math.pi * r * h) / _obstacle_area(o)
        phi = rng.uniform(0, 2 * math.pi, n)
        rad = np.where(side, r, r * np.sqrt(rng.random(n)))
        z = np.where(side, rng.uniform(0, h, n), h)
        return np.column_stack([o.cx + rad * np.cos(phi), o.cy + rad * np.sin(phi), o.base + z])
    r = o.size[0]
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v[:, 2] = np.abs(v[:, 2])
    return np.array([o.cx, o.cy, o.base]) + r * v


def _inside_footprint(o: Obstacle, x, y):
    if o.kind == "box":
        return (np.abs(x - o.cx) <= o.size[0]) & (np.abs(y - o.cy) <= o.size[1])
    return (x - o.cx) ** 2 + (y - o.cy) ** 2 <= o.size[0] ** 2


def gen_synthetic_scene(seed: int, spec: SceneSpec | None = None) -> LabeledCloud:
    """Ground (label 1) plus boxes, cylinders and vegetation domes (label 0)."""
    spec = spec or SceneSpec()
    spec.validate()
    rng = np.random.default_rng(seed)
    gx, gy = rng.uniform(-spec.max_slope, spec.max_slope, 2)

    def ground(x, y):
        return gx * x + gy * y

    obstacles = _place_obstacles(rng, spec, ground)
    kind_of = np.array([SYNTH_IDS[o.kind] for o in obstacles] + [SYNTH_IDS["ground"]], dtype=np.uint32)
    if spec.sampling == "lidar":
        h = spec.sensor_height
        n_az = max(1, math.ceil(spec.n_points / spec.n_rings))
        el = np.radians(np.linspace(spec.fov_down, spec.fov_up, spec.n_rings))
        az = np.linspace(0, 2 * math.pi, n_az, endpoint=False) + rng.uniform(0, 2 * math.pi / n_az)
        E, A = np.meshgrid(el, az, indexing="ij")
        dirs = np.column_stack([(np.cos(E) * np.cos(A)).ravel(), (np.cos(E) * np.sin(A)).ravel(), np.sin(E).ravel()])
        dirs = dirs[: spec.n_points]
        origin = (0.0, 0.0, h)
        t, hit = _ray_hits(origin, dirs, gx, gy, obstacles)
        t = t + rng.normal(0, spec.range_noise, len(t))
        pts = np.asarray(origin) + dirs * t[:, None]
        # the ground is bounded by the scene square; rays past it are lost
        with np.errstate(invalid="ignore"):
            keep = np.isfinite(t) & (np.abs(pts[:, :2]) <= spec.extent).all(axis=1)
        pts, hit = pts[keep], hit[keep]
    else:
        areas = np.array([_obstacle_area(o) for o in obstacles])
        ground_area = (2 * spec.extent) ** 2 - sum(_footprint_area(o) for o in obstacles)
        w = np.append(areas, ground_area)
        counts = rng.multinomial(spec.n_points, w / w.sum())
        parts, hits = [], []
        for k, o in enumerate(obstacles):
            parts.append(_sample_surface(rng, o, counts[k]))
            hits.append(np.full(counts[k], k))
        need = counts[-1]
        g = np.empty((0, 2))
        while len(g) < need:
            cand = rng.uniform(-spec.extent, spec.extent, (2 * need + 16, 2))
            out = np.ones(len(cand), dtype=bool)
            for o in obstacles:
                out &= ~_inside_footprint(o, cand[:, 0], cand[:, 1])
            g = np.vstack([g, cand[out]])
        g = g[:need]
        parts.append(np.column_stack([g, ground(g[:, 0], g[:, 1])]))
        hits.append(np.full(need, -1))
        pts = np.vstack(parts)
        hit = np.concatenate(hits).astype(np.int64)
    labels = (hit == -1).astype(np.uint8)
    raw = kind_of[hit]  # index -1 selects the trailing ground id
    intensity = np.where(labels == 1, 0.3, 0.6) + rng.normal(0, 0.05, len(pts))
    instance = np.where(hit >= 0, hit + 1, 0).astype(np.uint32)
    return LabeledCloud(pts, intensity, labels, raw, instance, obstacles)


def spec_to_dict(spec: SceneSpec) -> dict:
    return asdict(spec)
