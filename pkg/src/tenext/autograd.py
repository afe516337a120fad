"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every op returns a :class:`Tensor` that remembers its parents and a closure
that pushes the output gradient back to them. :meth:`Tensor.backward` walks
the graph in reverse topological order, so a node's gradient is complete
before its rule fires. Gradients accumulate; call ``zero_grad`` between steps.
"""
from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = "", dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable ``requires_grad`` tensor."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        # interior nodes get fresh buffers; leaves accumulate across calls
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar for the handful of ops layers need
    def __add__(self, other):
        return add(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Learnable leaf tensor with a dotted name used for checkpoints."""

    __slots__ = ()

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, name=name, dtype=dtype)


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _make(data, parents, backward) -> Tensor:
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, dtype=data.dtype)
    if needs:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# dense ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        return (g @ B.T if a.requires_grad else None,
                A.T @ g if b.requires_grad else None)

    return _make(A @ B, (a, b), backward)


def add(a, b) -> Tensor:
    """Elementwise sum of equal-shaped tensors, or (N, C) + (C,) row bias."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        def backward(g):
            return g, g
    elif b.data.ndim == 1 and a.data.ndim == 2 and a.shape[1] == b.shape[0]:
        def backward(g):
            return g, g.sum(axis=0)
    else:
        raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")
    return _make(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    """Elementwise product of equal-shaped tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} * {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        return g * B, g * A

    return _make(A * B, (a, b), backward)


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward)


def concat(xs, axis: int = 1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([x.data for x in xs], axis=axis), xs, backward)


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> Tensor:
    """Normalize each row over its channels (biased variance), then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    X = x.data
    C = X.shape[1]
    mu = X.mean(axis=1, keepdims=True)
    xc = X - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        dxhat = g * gamma.data
        dx = None
        if x.requires_grad:
            dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=1, keepdims=True) / C)
        return (dx,
                (g * xhat).sum(axis=0) if gamma.requires_grad else None,
                g.sum(axis=0) if beta.requires_grad else None)

    return _make(out, (x, gamma, beta), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def _stable_sigmoid(X):
    e = np.exp(-np.abs(X))
    return np.where(X >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def gelu(x) -> Tensor:
    """tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).

    Evaluated through the identity 0.5 (1 + tanh u) = sigmoid(2u), which
    avoids the cancellation in 1 + tanh(u) for large negative inputs.
    """
    x = as_tensor(x)
    X = x.data
    u = _GELU_C * (X + 0.044715 * X ** 3)
    s = _stable_sigmoid(2.0 * u)
    out = X * s

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * X * X)
        return (g * (s + X * 2.0 * s * (1.0 - s) * du),)

    return _make(out.astype(x.dtype), (x,), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    X = x.data
    # split by sign so large |x| never overflows exp
    s = _stable_sigmoid(X).astype(x.dtype)

    def backward(g):
        return (g * s * (1.0 - s),)

    return _make(s, (x,), backward)


BCE_EPS = 1e-7


def bce_loss(p, labels, weight_pos: float = 1.0, eps: float = BCE_EPS) -> Tensor:
    """Mean of -[w l log p + (1 - l) log(1 - p)] with p clamped to [eps, 1 - eps]."""
    p = as_tensor(p)
    lab = np.asarray(labels)
    if lab.shape[0] != p.shape[0]:
        raise ValueError(f"bce_loss: {p.shape[0]} probabilities vs {lab.shape[0]} labels")
    if not np.all((lab == 0) | (lab == 1)):
        bad = int(np.flatnonzero((lab != 0) & (lab != 1))[0])
        raise ValueError(f"bce_loss: label at row {bad} is {lab[bad]!r}, expected 0 or 1")
    P = p.data.reshape(lab.shape)
    pc = np.clip(P, eps, 1.0 - eps)
    lab = lab.astype(P.dtype)
    n = lab.size
    loss = -(weight_pos * lab * np.log(pc) + (1.0 - lab) * np.log(1.0 - pc)).mean()
    inside = (P > eps) & (P < 1.0 - eps)

    def backward(g):
        d = -(weight_pos * lab / pc - (1.0 - lab) / (1.0 - pc)) / n
        return ((g * d * inside).reshape(p.shape).astype(P.dtype),)

    return _make(np.asarray(loss, dtype=P.dtype), (p,), backward)


# ---------------------------------------------------------------------------
# row indexing


def gather(x, rows) -> Tensor:
    """Select rows ``x[rows]``; duplicates allowed."""
    x = as_tensor(x)
    rows = np.asarray(rows, dtype=np.int64)
    n = x.shape[0]
    if rows.size and (rows.min() < 0 or rows.max() >= n):
        raise IndexError(f"gather index out of range for {n} rows")

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, rows, g)
        return (out,)

    return _make(x.data[rows], (x,), backward)


def scatter_add(x, rows, n_out: int) -> Tensor:
    """Accumulate row ``i`` of ``x`` into output row ``rows[i]`` of an (n_out, C) zero tensor."""
    x = as_tensor(x)
    rows = np.asarray(rows, dtype=np.int64)
    if rows.shape[0] != x.shape[0]:
        raise ValueError("scatter_add: one target row per input row")
    if rows.size and (rows.min() < 0 or rows.max() >= n_out):
        raise IndexError(f"scatter_add index out of range for {n_out} rows")
    out = np.zeros((n_out,) + x.shape[1:], dtype=x.dtype)
    np.add.at(out, rows, x.data)

    def backward(g):
        return (g[rows],)

    return _make(out, (x,), backward)


# ---------------------------------------------------------------------------
# regularization


def drop_path(x, batch_idx, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Zero whole samples (rows sharing a batch index) with probability ``rate``.

    Survivors are scaled by 1 / (1 - rate). Identity when not training or
    when ``rate`` is 0.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"drop_path rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("drop_path in training mode needs an rng")
    batch_idx = np.asarray(batch_idx, dtype=np.int64)
    n_samples = int(batch_idx.max()) + 1 if batch_idx.size else 0
    keep = rng.random(n_samples) >= rate
    scale = (keep / (1.0 - rate)).astype(x.dtype)[batch_idx][:, None]

    def backward(g):
        return (g * scale,)

    return _make(x.data * scale, (x,), backward)
