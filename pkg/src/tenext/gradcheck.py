"""Central finite-difference checks of every differentiable op, in float64.

Each case builds a scalar ``L = sum(f(inputs) * R)`` with a fixed random
projection ``R``, differentiates it once with the tape, and compares every
input entry against ``(L(x + eps) - L(x - eps)) / (2 eps)``.

The relative error of one entry is ``|a - n| / max(|a|, |n|, floor)``. With
eps = 1e-3 the difference quotient itself is only good to about eps**2 in
absolute terms, so entries whose gradient is below ``floor`` (1e-2) are in
effect judged on an absolute error of ``tol * floor`` = 1e-6 instead of
dividing truncation error by a near-zero gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .layers import SparseConv, TeNextBlock, sparse_conv_features
from .sparse import CoordinateManager, SparseTensor, sort_unique

F64 = np.float64
EPS = 1e-3
TOL = 1e-4
FLOOR = 1e-2


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    n_entries: int
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err < self.tol)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name:<28} max rel err {self.max_rel_err:.3e} ({self.n_entries} entries)"


def rel_err(a, n, floor: float = FLOOR) -> np.ndarray:
    a, n = np.asarray(a, F64), np.asarray(n, F64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def check_fn(name, fn, inputs, eps: float = EPS, tol: float = TOL, seed: int = 0,
             max_entries: int | None = None, floor: float = FLOOR) -> CheckResult:
    """Compare tape gradients of ``fn(*tensors)`` with central differences.

    ``inputs`` are float64 arrays (differentiated) or ``Tensor``s with
    ``requires_grad=True`` (parameters); ``fn`` must be deterministic.
    ``max_entries`` caps the number of entries perturbed per input.
    """
    rng = np.random.default_rng(seed)
    tensors = [x if isinstance(x, ag.Tensor) else ag.Tensor(np.array(x, F64), requires_grad=True) for x in inputs]
    for t in tensors:
        t.zero_grad()
    out = fn(*tensors)
    R = rng.standard_normal(out.shape)

    def loss() -> float:
        with ag.no_grad():
            return float(np.sum(fn(*tensors).data * R))

    ag.sum_all(ag.mul(out, ag.Tensor(R, dtype=F64))).backward()
    worst, count = 0.0, 0
    for t in tensors:
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss()
            flat[i] = orig - eps
            lm = loss()
            flat[i] = orig
            num[j] = (lp - lm) / (2 * eps)
        ana = t.grad.reshape(-1)[idx]
        if len(idx):
            worst = max(worst, float(rel_err(ana, num, floor).max()))
        count += len(idx)
    return CheckResult(name, worst, count, tol)


# ---------------------------------------------------------------------------
# the suite


def _random_sparse(rng, n_max=24, extent=5, channels=4, batch=2, stride=1):
    """Random sparse tensor: unique coordinates on a small grid, float64 features."""
    c = np.column_stack([rng.integers(0, batch, n_max), rng.integers(0, extent, (n_max, 3)) * stride])
    c, _ = sort_unique(c)
    m = CoordinateManager()
    key = m.register(c, stride=stride)
    n = len(m.get(key))
    x = SparseTensor(ag.Tensor(rng.standard_normal((n, channels)), requires_grad=True, name="x"), key, m)
    return x


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap + x, x)


def _conv_case(rng, kernel_size, stride, transposed):
    if transposed and stride > 1:
        x = _random_sparse(rng, stride=1)
        coarse = x.manager.downsample(x.map_key, stride)
        xc = SparseTensor(ag.Tensor(rng.standard_normal((len(x.manager.get(coarse)), 4)), requires_grad=True),
                          coarse, x.manager)
        layer = SparseConv(4, 3, kernel_size, stride, transposed=True, rng=rng, dtype=F64)
        src = xc
    else:
        src = _random_sparse(rng)
        layer = SparseConv(4, 3, kernel_size, stride, transposed=transposed, rng=rng, dtype=F64)
    km, _ = layer.kernel_map(src)

    def f(feats, w, b):
        return sparse_conv_features(feats, w, b, km)

    return f, [src.feats, layer.weight, layer.bias]


def _module_case(module, x: SparseTensor):
    params = list(module.parameters())

    def f(feats, *_):
        return module(x.replace(feats)).feats

    return f, [x.feats] + params


def suite(seed: int = 0):
    """Yield ``(name, fn, inputs, kwargs)`` for every checked op."""
    rng = np.random.default_rng(seed)
    n, c = 7, 5
    yield "matmul", ag.matmul, [rng.standard_normal((n, c)), rng.standard_normal((c, 3))], {}
    yield "add", ag.add, [rng.standard_normal((n, c)), rng.standard_normal((n, c))], {}
    yield "add_bias", ag.add, [rng.standard_normal((n, c)), rng.standard_normal(c)], {}
    yield "mul", ag.mul, [rng.standard_normal((n, c)), rng.standard_normal((n, c))], {}
    yield "sum_all", ag.sum_all, [rng.standard_normal((n, c))], {}
    yield "concat", (lambda a, b: ag.concat([a, b])), [rng.standard_normal((n, 2)), rng.standard_normal((n, 3))], {}
    yield "layer_norm", ag.layer_norm, [rng.standard_normal((n, c)), rng.uniform(0.5, 1.5, c),
                                        rng.standard_normal(c)], {}
    yield "relu", ag.relu, [_away_from_zero(rng, (n, c))], {}
    yield "gelu", ag.gelu, [rng.standard_normal((n, c)) * 2], {}
    yield "sigmoid", ag.sigmoid, [rng.standard_normal((n, c)) * 2], {}
    lab = rng.integers(0, 2, 64)
    yield "bce_loss", (lambda p: ag.bce_loss(p, lab, 1.7)), [rng.uniform(0.1, 0.9, (64, 1))], {}
    rows = rng.integers(0, n, 11)
    yield "gather", (lambda x: ag.gather(x, rows)), [rng.standard_normal((n, c))], {}
    yield "scatter_add", (lambda x: ag.scatter_add(x, rows, n)), [rng.standard_normal((11, c))], {}
    bidx = np.repeat(np.arange(4), 3)
    yield ("drop_path", lambda x: ag.drop_path(x, bidx, 0.5, True, np.random.default_rng(3)),
           [rng.standard_normal((12, c))], {})
    for k, s, tr in ((1, 1, False), (3, 1, False), (5, 1, False), (3, 1, True),
                     (2, 2, False), (3, 2, False), (2, 2, True), (3, 2, True)):
        name = f"sparse_conv k{k} s{s}" + (" T" if tr else "")
        f, inputs = _conv_case(rng, k, s, tr)
        yield name, f, inputs, {}
    block = TeNextBlock(8, kernel_size=3, rng=rng, dtype=F64)
    f, inputs = _module_case(block, few_voxels(rng, 5, 8))
    yield "te_next_block", f, inputs, {}


def few_voxels(rng, n: int = 5, channels: int = 8, extent: int = 3) -> SparseTensor:
    """``n`` distinct voxels of one sample packed into an ``extent``-cube, so most are neighbours."""
    flat = np.sort(rng.choice(extent ** 3, n, replace=False))
    c = np.column_stack([np.zeros(n, np.int64), flat // extent ** 2, (flat // extent) % extent, flat % extent])
    m = CoordinateManager()
    key = m.register(c)
    return SparseTensor(ag.Tensor(rng.standard_normal((n, channels)), requires_grad=True, name="x"), key, m)


def run_suite(seed: int = 0, eps: float = EPS, tol: float = TOL) -> list[CheckResult]:
    return [check_fn(name, fn, inputs, eps=eps, tol=tol, seed=seed, **kw)
            for name, fn, inputs, kw in suite(seed)]
