"""Binary traversability metrics and precision-recall curves."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        for k in ("tp", "fp", "fn", "tn"):
            v = int(getattr(self, k))
            if v < 0:
                raise ValueError(f"{k} must be non-negative")
            setattr(self, k, v)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @classmethod
    def from_labels(cls, pred, truth) -> "ConfusionCounts":
        pred = np.asarray(pred).astype(bool)
        truth = np.asarray(truth).astype(bool)
        if pred.shape != truth.shape:
            raise ValueError(f"{pred.shape} predictions vs {truth.shape} labels")
        return cls(int(np.sum(pred & truth)), int(np.sum(pred & ~truth)),
                   int(np.sum(~pred & truth)), int(np.sum(~pred & ~truth)))

    def swapped(self) -> "ConfusionCounts":
        """Counts with the positive and negative class exchanged."""
        return ConfusionCounts(self.tn, self.fn, self.fp, self.tp)


def _ratio(num, den, name, flags):
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def metrics(counts: ConfusionCounts) -> dict:
    """Accuracy, precision, recall, F1, mIoU, TPR and TNR.

    A ratio with a zero denominator is reported as 0 and its name is listed
    under ``"undefined"``.
    """
    c = counts
    if c.total == 0:
        raise ValueError("metrics of all-zero confusion counts")
    flags: list[str] = []
    precision = _ratio(c.tp, c.tp + c.fp, "precision", flags)
    recall = _ratio(c.tp, c.tp + c.fn, "recall", flags)
    if precision + recall == 0:
        flags.append("f1")
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    iou_pos = _ratio(c.tp, c.tp + c.fp + c.fn, "iou_traversable", flags)
    iou_neg = _ratio(c.tn, c.tn + c.fp + c.fn, "iou_non_traversable", flags)
    tnr = _ratio(c.tn, c.tn + c.fp, "tnr", flags)
    return {
        "accuracy": (c.tp + c.tn) / c.total,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "miou": 0.5 * (iou_pos + iou_neg),
        "tpr": recall,
        "tnr": tnr,
        "undefined": flags,
    }


@dataclass
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    auc: float
    # "max_threshold_precision" when the strictest threshold already admits a negative
    flags: list = field(default_factory=list)

    def rows(self):
        return list(zip(self.thresholds.tolist(), self.precision.tolist(), self.recall.tolist()))

    def to_csv(self, path):
        lines = ["threshold,precision,recall"]
        lines += [f"{t:.9g},{p:.9g},{r:.9g}" for t, p, r in self.rows()]
        Path(path).write_text("\n".join(lines) + "\n")

    def to_svg(self, path, title: str = "precision-recall"):
        Path(path).write_text(pr_svg(self, title))


def pr_curve(probabilities, labels, n_thresholds: int = 100) -> PRCurve:
    """Precision/recall at thresholds drawn from the sorted unique scores.

    A point is predicted positive when ``p >= threshold``. With more unique
    scores than ``n_thresholds`` an evenly spaced quantile subset is used.
    AUC integrates precision over recall by the trapezoid rule, anchored at
    recall 0 with the precision of the strictest threshold.
    """
    p = np.asarray(probabilities, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if p.shape != y.shape:
        raise ValueError(f"{p.size} scores vs {y.size} labels")
    if y.all() or not y.any():
        raise ValueError("pr_curve needs both classes in the labels")
    uniq = np.unique(p)
    if len(uniq) > n_thresholds:
        idx = np.unique(np.round(np.linspace(0, len(uniq) - 1, n_thresholds)).astype(int))
        uniq = uniq[idx]
    order = np.argsort(-p, kind="stable")
    ps, ys = p[order], y[order]
    ctp = np.cumsum(ys)
    cfp = np.cumsum(~ys)
    # number of points with score >= t
    k = np.searchsorted(-ps, -uniq, side="right")
    tp = ctp[k - 1].astype(np.float64)
    fp = cfp[k - 1].astype(np.float64)
    precision = tp / (tp + fp)
    recall = tp / y.sum()
    th = uniq[::-1]
    precision, recall = precision[::-1], recall[::-1]
    r = np.concatenate([[0.0], recall])
    pr = np.concatenate([[precision[0]], precision])
    auc = float(np.sum(np.diff(r) * (pr[1:] + pr[:-1]) / 2))
    flags = [] if precision[0] == 1.0 else ["max_threshold_precision"]
    return PRCurve(th, precision, recall, auc, flags)


def pr_svg(curve: PRCurve, title: str = "precision-recall", size: int = 360) -> str:
    pad = 40
    w = size - 2 * pad

    def xy(r, p):
        return pad + r * w, size - pad - p * w

    pts = " ".join("%.2f,%.2f" % xy(r, p) for r, p in zip(curve.recall, curve.precision))
    ticks = []
    for v in (0.0, 0.5, 1.0):
        x, _ = xy(v, 0)
        _, y = xy(0, v)
        ticks.append(f'<text x="{x:.1f}" y="{size - pad + 16}" font-size="10" text-anchor="middle">{v:g}</text>')
        ticks.append(f'<text x="{pad - 6}" y="{y + 3:.1f}" font-size="10" text-anchor="end">{v:g}</text>')
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">\n'
        f'<rect x="{pad}" y="{pad}" width="{w}" height="{w}" fill="none" stroke="#444"/>\n'
        f'<polyline points="{pts}" fill="none" stroke="#c0392b" stroke-width="1.5"/>\n'
        + "\n".join(ticks) + "\n"
        f'<text x="{size / 2}" y="{pad - 12}" font-size="12" text-anchor="middle">{title} (AUC {curve.auc:.4f})</text>\n'
        f'<text x="{size / 2}" y="{size - 6}" font-size="11" text-anchor="middle">recall</text>\n'
        f'<text x="12" y="{size / 2}" font-size="11" transform="rotate(-90 12 {size / 2})" text-anchor="middle">precision</text>\n'
        "</svg>\n"
    )
