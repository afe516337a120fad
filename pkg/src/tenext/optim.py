"""AdamW with decoupled weight decay, and warmup + cosine-with-restarts schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 5e-3
    weight_decay: float = 0.05
    batch_size: int = 5
    warmup_epochs: int = 80
    restart_period: int = 20
    restart_mult: int = 2
    lr_min_ratio: float = 1e-2
    max_epochs: int = 300
    patience: int = 60
    seed: int = 0
    weight_pos: float = 1.0
    grad_clip: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    target_f1: float | None = None

    def __post_init__(self):
        if not (self.lr > 0 and self.batch_size >= 1 and self.max_epochs >= 1):
            raise ValueError("lr, batch_size and max_epochs must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.restart_period < 1 or self.restart_mult < 1 or self.warmup_epochs < 0:
            raise ValueError("restart_period, restart_mult must be >= 1 and warmup_epochs >= 0")
        if self.weight_decay < 0 or self.grad_clip <= 0:
            raise ValueError("weight_decay must be >= 0 and grad_clip > 0")


def lr_at(epoch: int, step_in_epoch: int, config: TrainConfig, steps_per_epoch: int = 1) -> float:
    """Learning rate at a (possibly fractional) position in training.

    Linear warmup from 0 to ``lr`` over ``warmup_epochs``; afterwards cosine
    annealing to ``lr * lr_min_ratio`` over periods ``T0, T0*mult, ...``,
    jumping back to ``lr`` at each restart.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    e = epoch + step_in_epoch / steps_per_epoch
    lr0 = config.lr
    if e < config.warmup_epochs:
        return lr0 * e / config.warmup_epochs
    lr_min = lr0 * config.lr_min_ratio
    t = e - config.warmup_epochs
    period = float(config.restart_period)
    while t >= period:
        t -= period
        period *= config.restart_mult
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * t / period))


class AdamW:
    """Adam moments with bias correction plus decoupled decay ``theta -= lr * wd * theta``."""

    def __init__(self, params, weight_decay: float = 0.05, betas=(0.9, 0.999), eps: float = 1e-8,
                 names=None):
        self.params = list(params)
        self.names = list(names) if names is not None else [p.name or str(i) for i, p in enumerate(self.params)]
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float, grads=None):
        grads = [p.grad for p in self.params] if grads is None else grads
        for name, g in zip(self.names, grads):
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient in parameter {name!r}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            upd = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= (upd + lr * self.weight_decay * p.data).astype(p.data.dtype)

    def state(self) -> dict:
        out = {}
        for name, m, v in zip(self.names, self.m, self.v):
            out[f"optim.m.{name}"] = m
            out[f"optim.v.{name}"] = v
        return out

    def load_state(self, tensors: dict, t: int):
        for i, name in enumerate(self.names):
            self.m[i][...] = tensors[f"optim.m.{name}"]
            self.v[i][...] = tensors[f"optim.v.{name}"]
        self.t = int(t)


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params))
    if total > max_norm:
        s = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= s
    return total
