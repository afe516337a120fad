"""Train the tiny model on a handful of synthetic scenes and score it.

Run:  python demos/train_and_evaluate.py [out_dir]

Takes about a minute on one core. Writes history.csv, best.ckpt, a PR
curve (CSV + SVG) into ``out_dir`` (default ``demo_out/train``).
"""
import sys
from pathlib import Path

import numpy as np

from tenext.data import SceneSpec, gen_synthetic_scene
from tenext.metrics import ConfusionCounts, metrics, pr_curve
from tenext.model import ModelConfig, TENeXt, count_parameters
from tenext.optim import TrainConfig
from tenext.training import evaluate, load_best, prepare, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/train")
out.mkdir(parents=True, exist_ok=True)

scenes = [prepare(gen_synthetic_scene(i, SceneSpec()), 0.2) for i in range(6)]
train_set, val_set = scenes[:5], scenes[5:]
model = TENeXt(ModelConfig.preset("tiny"))
print(f"tiny model: {count_parameters(model):,} parameters; {sum(len(s.coords) for s in scenes)} voxels")

# a short warm-up so a few epochs are enough for a demo
cfg = TrainConfig(max_epochs=12, warmup_epochs=2, restart_period=10)
result = train(model, train_set, val_set, cfg, out_dir=out)
for h in result.history:
    print(f"  epoch {h['epoch']:2d}  lr {h['lr']:.2e}  loss {h['train_loss']:.4f}  val F1 {h['val_f1']:.4f}")
load_best(model, result)

counts, scores, truth = evaluate(model, val_set, return_scores=True)
m = metrics(counts)
base = metrics(ConfusionCounts.from_labels(np.ones_like(truth), truth))
print(f"best epoch {result.best_epoch}: F1 {m['f1']:.4f} (all-traversable baseline {base['f1']:.4f}), "
      f"mIoU {m['miou']:.4f}, TNR {m['tnr']:.4f}")

curve = pr_curve(scores, truth)
curve.to_csv(out / "pr.csv")
curve.to_svg(out / "pr.svg")
print(f"AUC-PR {curve.auc:.4f}; curve written to {out}/pr.svg")
