"""Evaluation measures: per-class confusion metrics (dice, accuracy,
precision, sensitivity, specificity) and boundary distances (95th-percentile
Hausdorff, average surface distance), plus split-level aggregation to CSV."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

METRIC_NAMES = ("dice", "acc", "pre", "sen", "spe", "hd95", "asd")

__all__ = ["METRIC_NAMES", "MetricsReport", "confusion_metrics", "hd95_asd",
           "boundary_pixels", "evaluate"]


def _ratio(num: float, den: float) -> float:
    """0/0 counts as perfect (the class is absent on both sides)."""
    return 1.0 if den == 0 else num / den


def confusion_metrics(pred: np.ndarray, gt: np.ndarray, k: int):
    """One-vs-rest (dice, acc, pre, sen, spe) for class k."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    p = pred == k
    g = gt == k
    tp = int(np.sum(p & g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    tn = int(np.sum(~p & ~g))
    return (_ratio(2 * tp, 2 * tp + fp + fn),
            _ratio(tp + tn, tp + fp + fn + tn),
            _ratio(tp, tp + fp),
            _ratio(tp, tp + fn),
            _ratio(tn, tn + fp))


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Pixels of `mask` with at least one off-mask 4-neighbor; the image
    border counts as off-mask.  Returns (n,2) integer coordinates."""
    p = np.pad(mask, 1)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return np.argwhere(mask & ~interior)


def hd95_asd(pred: np.ndarray, gt: np.ndarray, k: int):
    """(hd95, asd) from bidirectional boundary distances of class k.

    hd95 is the nearest-rank 95th percentile, asd the mean, both over the
    concatenation of directed nearest-boundary distances.  One empty side
    scores the image diagonal on both metrics; two empty sides score 0.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    p_any = bool(np.any(pred == k))
    g_any = bool(np.any(gt == k))
    if not p_any and not g_any:
        return 0.0, 0.0
    if p_any != g_any:
        diag = math.hypot(pred.shape[0], pred.shape[1])
        return diag, diag
    bp = boundary_pixels(pred == k)
    bg = boundary_pixels(gt == k)
    d_pg = cKDTree(bg).query(bp)[0]
    d_gp = cKDTree(bp).query(bg)[0]
    d = np.concatenate([d_pg, d_gp])
    d.sort()
    hd95 = float(d[math.ceil(0.95 * len(d)) - 1])
    return hd95, float(d.mean())


@dataclass
class MetricsReport:
    per_class: dict = field(default_factory=dict)  # class -> {metric: value}
    mean: dict = field(default_factory=dict)       # metric -> value
    classes: list = field(default_factory=list)


def sample_metrics(pred: np.ndarray, gt: np.ndarray, k: int) -> dict:
    dice, acc, pre, sen, spe = confusion_metrics(pred, gt, k)
    hd95, asd = hd95_asd(pred, gt, k)
    return dict(zip(METRIC_NAMES, (dice, acc, pre, sen, spe, hd95, asd)))


def evaluate(predict_fn, index, split: str, image_size: int,
             num_classes: int, csv_path=None) -> MetricsReport:
    """Evaluate a predictor over a dense-labeled split.

    ``predict_fn`` maps an image (1,H,W) float32 to a (H,W) integer label
    map.  Metrics are computed per foreground class (1..K-1) and averaged
    over samples, then over classes.  ``csv_path`` optionally receives one
    row per (sample, class) plus `mean` rows, floats with 4 decimals.
    """
    from .data import load_sample

    fg = list(range(1, num_classes))
    ids = index.ids(split)
    rows = []
    acc: dict[int, dict[str, list]] = {k: {m: [] for m in METRIC_NAMES} for k in fg}
    for sid in ids:
        image, gt = load_sample(index, sid, split, image_size, num_classes)
        pred = predict_fn(image)
        for k in fg:
            vals = sample_metrics(pred, gt, k)
            rows.append((sid, str(k), vals))
            for m in METRIC_NAMES:
                acc[k][m].append(vals[m])
    report = MetricsReport(classes=fg)
    for k in fg:
        report.per_class[k] = {m: float(np.mean(acc[k][m])) if acc[k][m] else 0.0
                               for m in METRIC_NAMES}
        rows.append(("mean", str(k), report.per_class[k]))
    report.mean = {m: float(np.mean([report.per_class[k][m] for k in fg]))
                   for m in METRIC_NAMES}
    rows.append(("mean", "mean", report.mean))
    if csv_path is not None:
        with open(csv_path, "w") as f:
            f.write("id,class," + ",".join(METRIC_NAMES) + "\n")
            for sid, cls, vals in rows:
                f.write(f"{sid},{cls}," +
                        ",".join(f"{vals[m]:.4f}" for m in METRIC_NAMES) + "\n")
    return report
