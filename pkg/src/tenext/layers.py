"""Sparse layers: generalized sparse convolution and the residual blocks built on it."""
from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .sparse import KernelMap, SparseTensor


class Module:
    """Tiny torch-like container: attributes that are Modules or Parameters are tracked."""

    def __init__(self):
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, Parameter):
            self._params[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True):
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, items=()):
        super().__init__()
        self._items = []
        for m in items:
            self.append(m)

    def append(self, m: Module):
        setattr(self, str(len(self._items)), m)
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


# ---------------------------------------------------------------------------
# convolution


def sparse_conv_features(x: Tensor, weight: Tensor, bias: Tensor | None, kmap: KernelMap) -> Tensor:
    """``out[o] = sum_k sum_(i,o) in pairs(k) x[i] @ W[k] (+ bias)``.

    Relies on the kernel-map invariant that, within one offset, every input
    row and every output row occurs at most once, so fancy-index ``+=`` is an
    exact scatter.
    """
    X, W = x.data, weight.data
    if X.shape[1] != W.shape[1]:
        raise ValueError(f"channel mismatch: input has {X.shape[1]} channels, layer expects {W.shape[1]}")
    if X.shape[0] != kmap.n_in:
        raise ValueError(f"kernel map expects {kmap.n_in} input rows, got {X.shape[0]}")
    dtype = np.result_type(X.dtype, W.dtype)
    out = np.zeros((kmap.n_out, W.shape[2]), dtype=dtype)
    identity = (kmap.volume == 1 and kmap.n_in == kmap.n_out == len(kmap.in_rows[0])
                and kmap.n_in > 0 and _is_arange(kmap.in_rows[0]) and _is_arange(kmap.out_rows[0]))
    if identity:
        out += X @ W[0]
    else:
        for k in range(kmap.volume):
            i, o = kmap.in_rows[k], kmap.out_rows[k]
            if len(o):
                out[o] += X[i] @ W[k]
    if bias is not None:
        out += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        dx = np.zeros_like(X) if x.requires_grad else None
        dW = np.zeros_like(W) if weight.requires_grad else None
        if identity:
            if dx is not None:
                dx += g @ W[0].T
            if dW is not None:
                dW[0] = X.T @ g
        else:
            for k in range(kmap.volume):
                i, o = kmap.in_rows[k], kmap.out_rows[k]
                if not len(o):
                    continue
                go = g[o]
                if dx is not None:
                    dx[i] += go @ W[k].T
                if dW is not None:
                    dW[k] = X[i].T @ go
        grads = (dx, dW)
        if bias is not None:
            grads += (g.sum(axis=0) if bias.requires_grad else None,)
        return grads

    return ag._make(out, parents, backward)


def _is_arange(a: np.ndarray) -> bool:
    return a[0] == 0 and a[-1] == len(a) - 1 and (len(a) < 2 or bool(np.all(np.diff(a) == 1)))


class SparseConv(Module):
    """Sparse 3D convolution.

    ``stride == 1`` keeps the coordinate map. ``stride > 1`` maps onto the
    floor-to-stride coarser map; a kernel equal to the stride gives the
    non-overlapping down-sampler. ``transposed=True`` with ``stride > 1`` maps
    a coarse tensor back onto the stored finer map at ``stride_in / stride``,
    reusing the mirror strided kernel map with roles swapped.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, stride: int = 1,
                 transposed: bool = False, bias: bool = True, dilation: int = 1,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        if kernel_size % 2 == 0 and kernel_size != stride:
            raise ValueError("kernel size must be odd unless it equals the stride")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride, self.transposed, self.dilation = kernel_size, stride, transposed, dilation
        vol = kernel_size ** 3
        fan_in = in_channels * (1 if (transposed and kernel_size == stride) else vol)
        bound = math.sqrt(6.0 / fan_in)
        rng = rng or np.random.default_rng(0)
        self.weight = Parameter(rng.uniform(-bound, bound, (vol, in_channels, out_channels)).astype(dtype))
        if bias:
            self.bias = Parameter(np.zeros(out_channels, dtype=dtype))
        else:
            self.bias = None

    def kernel_map(self, x: SparseTensor) -> tuple[KernelMap, str]:
        m, key, K, s = x.manager, x.map_key, self.kernel_size, self.stride
        if s == 1:
            km = m.kernel_map(key, key, K, self.dilation)
            return (km.transposed() if self.transposed else km), key
        if not self.transposed:
            out_key = m.downsample(key, s)
            if K == s:
                return m.strided_kernel_map(key, out_key, s), out_key
            return m.kernel_map(key, out_key, K, self.dilation), out_key
        target = x.stride // s
        if target < 1 or x.stride % s:
            raise ValueError(f"cannot upsample stride {x.stride} by {s}")
        try:
            fine = m.find_map(target)
        except KeyError:
            raise KeyError(f"transposed conv: no stored coordinate map at stride {target}") from None
        if K == s:
            km = m.strided_kernel_map(fine, key, s)
        else:
            km = m.kernel_map(fine, key, K, self.dilation)
        return km.transposed(), fine

    def forward(self, x: SparseTensor) -> SparseTensor:
        if x.n_channels != self.in_channels:
            raise ValueError(f"channel mismatch: input has {x.n_channels} channels, layer expects {self.in_channels}")
        km, out_key = self.kernel_map(x)
        feats = sparse_conv_features(x.feats, self.weight, self.bias, km)
        return SparseTensor(feats, out_key, x.manager, x.inverse)

    def n_weights(self) -> int:
        return int(self.weight.data.size + (0 if self.bias is None else self.bias.data.size))


class LayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-6, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.weight = Parameter(np.ones(channels, dtype=dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))

    def forward(self, x: SparseTensor) -> SparseTensor:
        return x.replace(ag.layer_norm(x.feats, self.weight, self.bias, self.eps))


def _act(name: str):
    return {"gelu": ag.gelu, "relu": ag.relu}[name]


class TeNextBlock(Module):
    """Bottleneck residual block: 1x1x1 reduce N -> N/4, KxKxK spatial conv, 1x1x1 expand to M.

    When ``N == M`` the input is added to the branch output, then LayerNorm
    and GELU follow. Drop-path acts on the branch only, so the identity path
    always survives.
    """

    def __init__(self, in_channels: int, out_channels: int | None = None, kernel_size: int = 7,
                 drop_path_rate: float = 0.0, activation: str = "gelu",
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        out_channels = in_channels if out_channels is None else out_channels
        if in_channels % 4:
            raise ValueError(f"TeNextBlock input channels must be divisible by 4, got {in_channels}")
        mid = in_channels // 4
        self.in_channels, self.out_channels, self.mid_channels = in_channels, out_channels, mid
        self.reduce = SparseConv(in_channels, mid, 1, rng=rng, dtype=dtype)
        self.spatial = SparseConv(mid, mid, kernel_size, rng=rng, dtype=dtype)
        self.expand = SparseConv(mid, out_channels, 1, rng=rng, dtype=dtype)
        self.norm = LayerNorm(out_channels, dtype=dtype)
        self.drop_path_rate = drop_path_rate
        self.activation = activation
        self.rng = None

    @property
    def has_skip(self) -> bool:
        return self.in_channels == self.out_channels

    def forward(self, x: SparseTensor) -> SparseTensor:
        if x.n_channels != self.in_channels:
            raise ValueError(f"channel mismatch: input has {x.n_channels} channels, block expects {self.in_channels}")
        y = self.expand(self.spatial(self.reduce(x)))
        branch = ag.drop_path(y.feats, x.coords[:, 0], self.drop_path_rate, self.training, self.rng)
        s = ag.add(x.feats, branch) if self.has_skip else branch
        s = ag.layer_norm(s, self.norm.weight, self.norm.bias, self.norm.eps)
        return x.replace(_act(self.activation)(s))


class ResNetBasicBlock(Module):
    """Two KxKxK convs in pre-activation order: ``x + conv2(relu(ln2(conv1(relu(ln1(x))))))``.

    A 1x1x1 projection on the identity path is built only when requested
    for ``in != out``; without it a channel change is an error.
    """

    def __init__(self, in_channels: int, out_channels: int | None = None, kernel_size: int = 3,
                 project: bool = False, drop_path_rate: float = 0.0,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        out_channels = in_channels if out_channels is None else out_channels
        if in_channels != out_channels and not project:
            raise ValueError(f"channel mismatch: {in_channels} -> {out_channels} without projection")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.norm1 = LayerNorm(in_channels, dtype=dtype)
        self.conv1 = SparseConv(in_channels, out_channels, kernel_size, rng=rng, dtype=dtype)
        self.norm2 = LayerNorm(out_channels, dtype=dtype)
        self.conv2 = SparseConv(out_channels, out_channels, kernel_size, rng=rng, dtype=dtype)
        self.proj = SparseConv(in_channels, out_channels, 1, rng=rng, dtype=dtype) if in_channels != out_channels else None
        self.drop_path_rate = drop_path_rate
        self.rng = None

    def forward(self, x: SparseTensor) -> SparseTensor:
        if x.n_channels != self.in_channels:
            raise ValueError(f"channel mismatch: input has {x.n_channels} channels, block expects {self.in_channels}")
        h = x.replace(ag.relu(self.norm1(x).feats))
        h = self.conv1(h)
        h = h.replace(ag.relu(self.norm2(h).feats))
        h = self.conv2(h)
        branch = ag.drop_path(h.feats, x.coords[:, 0], self.drop_path_rate, self.training, self.rng)
        ident = self.proj(x).feats if self.proj is not None else x.feats
        return x.replace(ag.add(ident, branch))
