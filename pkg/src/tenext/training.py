"""Training loop: BCE on per-voxel outputs, AdamW, scheduled LR, F1 early stopping."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import checkpoint as ckpt
from .data import LabeledCloud, voxel_labels
from .metrics import ConfusionCounts, metrics
from .model import TENeXt, predict_labels
from .optim import AdamW, TrainConfig, clip_grad_norm, lr_at
from .sparse import CoordinateManager, SparseTensor, quantize

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "lr", "train_loss", "val_f1", "val_miou", "val_acc")


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch = epoch, batch


@dataclass
class VoxelScene:
    """A cloud quantized once: sorted voxel coordinates, voxel labels, point->voxel map."""

    coords: np.ndarray
    labels: np.ndarray
    inverse: np.ndarray
    point_labels: np.ndarray | None = None


def prepare(cloud: LabeledCloud, scale: float) -> VoxelScene:
    q = quantize(cloud.points, scale=scale)
    lab = voxel_labels(q.inverse, cloud.labels, len(q)) if cloud.labels is not None else None
    return VoxelScene(q.coords[:, 1:].copy(), lab, q.inverse, cloud.labels)


def collate(scenes: list[VoxelScene], dtype=np.float32) -> tuple[SparseTensor, np.ndarray | None]:
    """Stack scenes along the batch index; rows stay sorted because ``b`` is the major key."""
    coords = np.concatenate([np.column_stack([np.full(len(s.coords), i, np.int64), s.coords])
                             for i, s in enumerate(scenes)])
    m = CoordinateManager()
    key = m.register(coords, stride=1)
    x = SparseTensor(ag.Tensor(np.ones((len(coords), 1), dtype=dtype)), key, m)
    labels = None
    if all(s.labels is not None for s in scenes):
        labels = np.concatenate([s.labels for s in scenes])
    return x, labels


def evaluate(model: TENeXt, scenes: list[VoxelScene], threshold: float = 0.5,
             per_point: bool = False, return_scores: bool = False):
    """Confusion counts over voxels (default) or original points, one scene at a time."""
    counts = ConfusionCounts()
    scores, truth = [], []
    for s in scenes:
        x, lab = collate([s], model.dtype)
        p = model.predict(x)
        if per_point:
            p, lab = p[s.inverse], s.point_labels
        counts = counts + ConfusionCounts.from_labels(predict_labels(p, threshold), lab)
        if return_scores:
            scores.append(p)
            truth.append(lab)
    if return_scores:
        return counts, np.concatenate(scores), np.concatenate(truth)
    return counts


class EarlyStopping:
    """Tracks the best validation F1; ``stop`` once ``patience`` epochs pass without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = 0
        self.bad = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record ``value``; return True when it is a new best."""
        if value > self.best:
            self.best, self.best_epoch, self.bad = value, epoch, 0
            return True
        self.bad += 1
        return False

    @property
    def stop(self) -> bool:
        return self.bad >= self.patience


@dataclass
class TrainResult:
    best_state: dict
    best_f1: float
    best_epoch: int
    history: list = field(default_factory=list)
    stopped_early: bool = False

    def history_csv(self) -> str:
        return history_csv(self.history)


def history_csv(history) -> str:
    lines = [",".join(HISTORY_COLUMNS)]
    for h in history:
        lines.append("%d,%.10g,%.10g,%.10g,%.10g,%.10g" % tuple(h[c] for c in HISTORY_COLUMNS))
    return "\n".join(lines) + "\n"


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def train(model: TENeXt, train_set, val_set, config: TrainConfig, out_dir=None,
          resume: bool = False, val_metrics_fn=None, max_epochs_this_run: int | None = None) -> TrainResult:
    """Fit ``model`` and keep the parameters of the best validation-F1 epoch.

    ``train_set``/``val_set`` are lists of :class:`LabeledCloud` or prepared
    :class:`VoxelScene`. With ``out_dir``, writes ``history.csv``,
    ``best.ckpt`` and a resumable ``state.ckpt`` after every epoch; with
    ``resume=True`` training continues from ``state.ckpt``.
    ``max_epochs_this_run`` ends the call early without marking the run as
    finished (used to simulate an interruption). ``val_metrics_fn(model,
    epoch)`` replaces validation scoring when given.
    """
    if not train_set or not val_set:
        raise ValueError("training and validation splits must be non-empty")
    scale = model.config.quantization_scale
    train_set = [s if isinstance(s, VoxelScene) else prepare(s, scale) for s in train_set]
    val_set = [s if isinstance(s, VoxelScene) else prepare(s, scale) for s in val_set]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    params = list(model.named_parameters())
    names = [n for n, _ in params]
    plist = [p for _, p in params]
    opt = AdamW(plist, config.weight_decay, (config.beta1, config.beta2), config.eps, names=names)
    rng = np.random.default_rng(config.seed)
    stopper = EarlyStopping(config.patience)
    history: list[dict] = []
    best_state = {n: p.data.copy() for n, p in params}
    start_epoch = 0
    steps_per_epoch = math.ceil(len(train_set) / config.batch_size)

    if resume and out is not None and (out / "state.ckpt").exists():
        tensors, meta = ckpt.load(out / "state.ckpt")
        ckpt.load_state(model, {n: tensors[n] for n in names})
        opt.load_state(tensors, meta["opt_step"])
        best_state = {n: tensors[f"best.{n}"] for n in names}
        rng.bit_generator.state = meta["rng"]
        model.rng.bit_generator.state = meta["model_rng"]
        stopper.best, stopper.best_epoch, stopper.bad = meta["best_f1"], meta["best_epoch"], meta["bad"]
        history = meta["history"]
        start_epoch = meta["epoch"]
        if meta.get("finished"):
            return TrainResult(best_state, stopper.best, stopper.best_epoch, history, meta.get("stopped_early", False))

    end_epoch = config.max_epochs
    if max_epochs_this_run is not None:
        end_epoch = min(end_epoch, start_epoch + max_epochs_this_run)
    stopped = False
    finished = False
    for epoch in range(start_epoch, end_epoch):
        model.train()
        order = rng.permutation(len(train_set))
        losses = []
        lr_epoch = lr_at(epoch, 0, config, steps_per_epoch)
        for b in range(steps_per_epoch):
            batch = [train_set[i] for i in order[b * config.batch_size:(b + 1) * config.batch_size]]
            x, labels = collate(batch, model.dtype)
            model.zero_grad()
            p = model(x)
            loss = ag.bce_loss(p, labels, config.weight_pos)
            lv = float(loss.data)
            if not math.isfinite(lv):
                raise TrainingDiverged(epoch + 1, b, lv)
            loss.backward()
            clip_grad_norm(plist, config.grad_clip)
            opt.step(lr_at(epoch, b, config, steps_per_epoch))
            losses.append(lv)
        if val_metrics_fn is not None:
            vm = val_metrics_fn(model, epoch + 1)
        else:
            vm = metrics(evaluate(model, val_set))
        row = {"epoch": epoch + 1, "lr": lr_epoch, "train_loss": float(np.mean(losses)),
               "val_f1": vm["f1"], "val_miou": vm["miou"], "val_acc": vm["accuracy"]}
        history.append(row)
        if stopper.update(epoch + 1, vm["f1"]):
            best_state = {n: p.data.copy() for n, p in params}
        log.info("epoch %d lr %.3g loss %.4f val_f1 %.4f", epoch + 1, lr_epoch, row["train_loss"], vm["f1"])
        stopped = stopper.stop or (config.target_f1 is not None and stopper.best >= config.target_f1)
        finished = stopped or epoch + 1 >= config.max_epochs
        if out is not None:
            _write_outputs(out, model, opt, best_state, stopper, history, rng, epoch + 1, finished, stopped)
        if stopped:
            break
    return TrainResult(best_state, stopper.best, stopper.best_epoch, history, stopped)


def _write_outputs(out: Path, model, opt, best_state, stopper, history, rng, epoch, finished, stopped):
    (out / "history.csv").write_text(history_csv(history))
    meta = {"config": model.config.to_dict(), "step": opt.t, "best_f1": stopper.best,
            "best_epoch": stopper.best_epoch}
    ckpt.save(out / "best.ckpt", best_state, meta)
    tensors = dict(ckpt.model_state(model))
    tensors.update(opt.state())
    tensors.update({f"best.{n}": a for n, a in best_state.items()})
    state_meta = dict(meta, opt_step=opt.t, rng=_rng_state(rng), model_rng=_rng_state(model.rng),
                      bad=stopper.bad, history=history, epoch=epoch, finished=finished, stopped_early=stopped)
    ckpt.save(out / "state.ckpt", tensors, state_meta)


def load_best(model: TENeXt, result: TrainResult) -> TENeXt:
    ckpt.load_state(model, result.best_state)
    return model
