import math

import numpy as np
import pytest

from tenext import autograd as ag
from tenext.data import SceneSpec, gen_synthetic_scene
from tenext.model import ModelConfig, TENeXt
from tenext.optim import AdamW, TrainConfig, clip_grad_norm
from tenext.training import (EarlyStopping, TrainingDiverged, collate, evaluate, history_csv,
                             load_best, prepare, train)

SMALL = SceneSpec(extent=6.0, n_points=2500, n_obstacles=6)


@pytest.fixture(scope="module")
def scenes():
    return [prepare(gen_synthetic_scene(i, SMALL), 0.2) for i in range(4)]


def tiny(seed=0):
    return TENeXt(ModelConfig.preset("tiny", seed=seed))


def quick(**kw):
    base = dict(max_epochs=3, warmup_epochs=1, restart_period=2, batch_size=2, patience=10, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_early_stopping_rule():
    s = EarlyStopping(patience=1)
    assert s.update(1, 0.9)
    assert not s.stop
    assert not s.update(2, 0.8)
    assert s.stop and s.best_epoch == 1


def test_train_stops_on_decreasing_f1(scenes):
    f1s = iter([0.9, 0.8, 0.7, 0.6])

    def fake(model, epoch):
        return {"f1": next(f1s), "miou": 0.0, "accuracy": 0.0}

    m = tiny()
    r = train(m, scenes[:2], scenes[2:], quick(max_epochs=4, patience=1), val_metrics_fn=fake)
    assert [h["epoch"] for h in r.history] == [1, 2]
    assert r.best_epoch == 1 and r.best_f1 == 0.9 and r.stopped_early


def test_best_state_is_argmax(scenes):
    f1s = iter([0.3, 0.7, 0.5])
    snaps = {}

    def fake(model, epoch):
        snaps[epoch] = {n: p.data.copy() for n, p in model.named_parameters()}
        return {"f1": next(f1s), "miou": 0.0, "accuracy": 0.0}

    m = tiny()
    r = train(m, scenes[:2], scenes[2:], quick(), val_metrics_fn=fake)
    assert r.best_f1 >= max(h["val_f1"] for h in r.history)
    assert r.best_epoch == 2
    assert all(np.array_equal(r.best_state[n], snaps[2][n]) for n in snaps[2])
    load_best(m, r)
    assert all(np.array_equal(p.data, snaps[2][n]) for n, p in m.named_parameters())


def test_loss_decreases_on_fixed_batch(scenes):
    """First 10 AdamW steps at the default peak rate on one fixed batch."""
    cfg = TrainConfig()
    m = tiny()
    params = list(m.named_parameters())
    opt = AdamW([p for _, p in params], cfg.weight_decay, names=[n for n, _ in params])
    x, y = collate(scenes[:2])
    losses = []
    for _ in range(10):
        m.zero_grad()
        loss = ag.bce_loss(m(x), y, cfg.weight_pos)
        loss.backward()
        clip_grad_norm([p for _, p in params], cfg.grad_clip)
        opt.step(cfg.lr)
        losses.append(float(loss.data))
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_determinism_history(scenes, tmp_path):
    a = train(tiny(), scenes[:2], scenes[2:], quick(), out_dir=tmp_path / "a")
    b = train(tiny(), scenes[:2], scenes[2:], quick(), out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()
    assert (tmp_path / "a" / "best.ckpt").read_bytes() == (tmp_path / "b" / "best.ckpt").read_bytes()
    assert a.history_csv().splitlines()[0] == "epoch,lr,train_loss,val_f1,val_miou,val_acc"


def test_resume_matches_uninterrupted(scenes, tmp_path):
    cfg = quick(max_epochs=4)
    full = train(tiny(), scenes[:3], scenes[3:], cfg, out_dir=tmp_path / "full")
    part = tmp_path / "part"
    train(tiny(), scenes[:3], scenes[3:], cfg, out_dir=part, max_epochs_this_run=2)
    assert len((part / "history.csv").read_text().splitlines()) == 3
    resumed = train(tiny(), scenes[:3], scenes[3:], cfg, out_dir=part, resume=True)
    assert history_csv(resumed.history) == history_csv(full.history)
    assert (part / "best.ckpt").read_bytes() == (tmp_path / "full" / "best.ckpt").read_bytes()


def test_lr_column_follows_schedule(scenes):
    from tenext.optim import lr_at
    cfg = quick(max_epochs=3)
    r = train(tiny(), scenes[:2], scenes[2:], cfg)
    assert [h["lr"] for h in r.history] == [lr_at(e, 0, cfg) for e in range(3)]


def test_divergence_names_batch(scenes):
    m = tiny()
    m.head.bias.data[:] = np.nan
    with pytest.raises(TrainingDiverged) as e:
        train(m, scenes[:2], scenes[2:], quick())
    assert e.value.epoch == 1 and e.value.batch == 0
    assert "batch 0" in str(e.value)


def test_empty_split_rejected(scenes):
    with pytest.raises(ValueError, match="non-empty"):
        train(tiny(), [], scenes, quick())


def test_target_f1_ends_run(scenes):
    def fake(model, epoch):
        return {"f1": 0.99, "miou": 0.0, "accuracy": 0.0}

    r = train(tiny(), scenes[:2], scenes[2:], quick(max_epochs=5, target_f1=0.95), val_metrics_fn=fake)
    assert len(r.history) == 1 and r.stopped_early


def test_collate_offsets_batch_index(scenes):
    x, y = collate(scenes[:3])
    assert len(x.coords) == sum(len(s.coords) for s in scenes[:3]) == len(y)
    assert np.array_equal(np.unique(x.coords[:, 0]), [0, 1, 2])
    assert np.all(np.diff(x.coords[:, 0]) >= 0)


def test_evaluate_counts_points_or_voxels(scenes):
    m = tiny()
    vox = evaluate(m, scenes[:2])
    pts = evaluate(m, scenes[:2], per_point=True)
    assert vox.total == sum(len(s.coords) for s in scenes[:2])
    assert pts.total == sum(len(s.point_labels) for s in scenes[:2])
