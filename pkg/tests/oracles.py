"""Independent brute-force references used by the tests.

Nothing here imports the engine's kernel-map or lookup code: each oracle
recomputes its answer from first principles on dense arrays or Python sets.
"""
from __future__ import annotations

import math

import numpy as np


def dense_grid(coords, feats, stride, lo, shape):
    """Scatter sparse rows into a dense (B, X, Y, Z, C) array indexed in units of ``stride``."""
    B = int(coords[:, 0].max()) + 1
    D = np.zeros((B,) + tuple(shape) + (feats.shape[1],), dtype=np.float64)
    occ = np.zeros((B,) + tuple(shape), dtype=bool)
    for (b, x, y, z), f in zip(coords, feats):
        i, j, k = (x - lo[0]) // stride, (y - lo[1]) // stride, (z - lo[2]) // stride
        D[b, i, j, k] = f
        occ[b, i, j, k] = True
    return D, occ


def _taps(K, centered=True):
    r = range(-(K // 2), K // 2 + 1) if centered else range(K)
    # x fastest, then y, then z
    return [(dx, dy, dz) for dz in r for dy in r for dx in r]


def conv_oracle(in_coords, feats, in_stride, out_coords, W, K, dilation=1):
    """Dense triple-loop convolution with a centered odd kernel, evaluated at ``out_coords``.

    out(o) = sum over (dz, dy, dx) of W[tap] . x(o + (dx, dy, dz) * dilation * in_stride),
    taps numbered x fastest; missing sites read as zero. ``out_coords`` may be
    the input set (stride 1) or a coarser set (strided conv).
    """
    in_coords = np.asarray(in_coords)
    out_coords = np.asarray(out_coords)
    h = K // 2
    step = in_stride * dilation
    pad = h * step + 1
    allc = np.vstack([in_coords, out_coords])
    lo = allc[:, 1:].min(axis=0) - pad
    shape = allc[:, 1:].max(axis=0) + pad - lo + 1
    D, occ = dense_grid(in_coords, feats, 1, lo, shape)
    out = np.zeros((len(out_coords), W.shape[2]))
    for r, (b, x, y, z) in enumerate(out_coords):
        t = 0
        for dz in range(-h, h + 1):
            for dy in range(-h, h + 1):
                for dx in range(-h, h + 1):
                    i, j, k = x + dx * step - lo[0], y + dy * step - lo[1], z + dz * step - lo[2]
                    if occ[b, i, j, k]:
                        out[r] += D[b, i, j, k] @ W[t]
                    t += 1
    return out


def conv_oracle_nonoverlap(in_coords, feats, in_stride, out_coords, W, factor):
    """Kernel == stride down-sampler: out(p) = sum_{t in {0..f-1}^3} W[t] x(p + t * in_stride)."""
    taps = _taps(factor, centered=False)
    index = {tuple(c): i for i, c in enumerate(map(tuple, in_coords))}
    out = np.zeros((len(out_coords), W.shape[2]))
    for r, (b, x, y, z) in enumerate(out_coords):
        for t, (dx, dy, dz) in enumerate(taps):
            i = index.get((b, x + dx * in_stride, y + dy * in_stride, z + dz * in_stride))
            if i is not None:
                out[r] += feats[i] @ W[t]
    return out


def transposed_oracle(coarse_coords, feats, fine_coords, fine_stride, W, K, factor):
    """Transposed conv onto ``fine_coords``: each fine site gathers from the coarse sites that
    the mirror forward conv would have fed from it.

    K == factor: the coarse parent floor(o / (fine_stride*factor)) through tap (o - parent)/fine_stride.
    odd K: the coarse site c with o == c + t * fine_stride, through tap t.
    """
    index = {tuple(c): i for i, c in enumerate(map(tuple, coarse_coords))}
    s = fine_stride * factor
    out = np.zeros((len(fine_coords), W.shape[2]))
    taps = _taps(K, centered=K != factor)
    for r, (b, x, y, z) in enumerate(fine_coords):
        for t, (dx, dy, dz) in enumerate(taps):
            c = (b, x - dx * fine_stride, y - dy * fine_stride, z - dz * fine_stride)
            if any(v % s for v in c[1:]):
                continue
            i = index.get(c)
            if i is not None:
                out[r] += feats[i] @ W[t]
    return out


def distinct_cells(points, scale):
    """Hash-set count of occupied cells, using Python floats and math.floor."""
    return {tuple(math.floor(float(v) / scale) for v in p) for p in points}


def pr_recount(scores, labels, thresholds):
    """O(n^2) recount: for each threshold, count predictions p >= t against every label."""
    out = []
    for t in thresholds:
        tp = fp = fn = 0
        for p, l in zip(scores, labels):
            pred = p >= t
            if pred and l == 1:
                tp += 1
            elif pred and l == 0:
                fp += 1
            elif not pred and l == 1:
                fn += 1
        prec = tp / (tp + fp) if tp + fp else 1.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        out.append((t, prec, rec))
    return out


def fine_segment_hits(state, origin, cell, a, b, blocked_value=1, step_frac=0.02):
    """True if segment a->b touches a blocked cell, sampled every ``step_frac`` cells (50x finer
    than the planner's half-cell check), also flagging points outside the grid."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = max(int(np.ceil(np.linalg.norm(b - a) / (step_frac * cell))), 1)
    for k in range(n + 1):
        p = a + (b - a) * (k / n)
        i, j = int(math.floor((p[0] - origin[0]) / cell)), int(math.floor((p[1] - origin[1]) / cell))
        if not (0 <= i < state.shape[0] and 0 <= j < state.shape[1]):
            return True
        if state[i, j] == blocked_value:
            return True
    return False


def conv_equivalence_case(rng, K, stride, transposed, max_extent=8, fill=0.3, cin=3, cout=2):
    """Run one random sparse conv against the dense oracles; return the max abs deviation.

    stride 1: K odd, output on the input map (transposed swaps the pair roles).
    stride 2, forward: K odd or K == 2, output on the floor-to-stride map.
    stride 2, transposed: the input lives on the coarse map and the output on
    the stored fine map.
    """
    from tenext.layers import SparseConv
    from tenext.sparse import CoordinateManager, SparseTensor
    from tenext.autograd import Tensor

    ext = int(rng.integers(3, max_extent + 1))
    occ = rng.random((2, ext, ext, ext)) < fill
    occ[0, 0, 0, 0] = True
    c = np.argwhere(occ).astype(np.int64)
    m = CoordinateManager()
    fine = m.register(c, stride=1)
    layer = SparseConv(cin, cout, K, stride, transposed=transposed, rng=rng)
    layer.bias.data[:] = rng.standard_normal(cout).astype(np.float32)
    W = layer.weight.data.astype(np.float64)
    bias = layer.bias.data.astype(np.float64)
    if transposed and stride > 1:
        coarse = m.downsample(fine, stride)
        src_key, src_stride = coarse, stride
    else:
        src_key, src_stride = fine, 1
    n_src = len(m.get(src_key))
    X = rng.standard_normal((n_src, cin)).astype(np.float32)
    x = SparseTensor(Tensor(X), src_key, m)
    y = layer(x)
    src = m.get(src_key).coords
    dst = y.coords
    Xd = X.astype(np.float64)
    if not transposed:
        if stride == 1:
            ref = conv_oracle(src, Xd, 1, dst, W, K)
        elif K == stride:
            ref = conv_oracle_nonoverlap(src, Xd, 1, dst, W, stride)
        else:
            ref = conv_oracle(src, Xd, 1, dst, W, K)
        expect_coords = m.get(fine).coords if stride == 1 else np.unique(
            np.column_stack([c[:, 0], (c[:, 1:] // stride) * stride]), axis=0)
    else:
        ref = transposed_oracle(src, Xd, dst, 1, W, K, stride)
        expect_coords = m.get(fine).coords
    assert np.array_equal(dst, expect_coords)
    return float(np.max(np.abs(y.F.astype(np.float64) - (ref + bias))))


CONV_CONFIGS = [(1, 1, False), (3, 1, False), (5, 1, False), (7, 1, False),
                (1, 1, True), (3, 1, True), (5, 1, True), (7, 1, True),
                (2, 2, False), (3, 2, False), (5, 2, False), (7, 2, False),
                (2, 2, True), (3, 2, True), (5, 2, True), (7, 2, True)]
