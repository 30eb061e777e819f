"""Shadow detection metrics: confusion counts, class-wise accuracies, ROC/AUC,
isolated-pixel counts and JSON reports."""

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.integrate import trapezoid

from . import __version__
from .errors import ShapeError
from .utils import ensure_dir, write_csv


TOOL_NAME = 'shadowkit'

# Published pixel accuracies of the structured-CNN detector with least-squares
# shadow optimization, reproduced for context only.
LITERATURE_REFERENCE = {
    'note': 'literature reference, not a measurement of this run',
    'overall_pixel_accuracy': {'UCF': 0.931, 'UIUC': 0.934, 'CMU': 0.940},
}


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def shadow_accuracy(self) -> Optional[float]:
        """TP / (TP + FN); None when the groundtruth has no shadow."""
        positives = self.tp + self.fn
        return self.tp / positives if positives else None

    @property
    def non_shadow_accuracy(self) -> Optional[float]:
        negatives = self.tn + self.fp
        return self.tn / negatives if negatives else None

    @property
    def overall_accuracy(self) -> Optional[float]:
        return (self.tp + self.tn) / self.total if self.total else None

    def __add__(self, other: 'ConfusionCounts') -> 'ConfusionCounts':
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {
            **asdict(self),
            'shadow_accuracy': self.shadow_accuracy,
            'non_shadow_accuracy': self.non_shadow_accuracy,
            'overall_accuracy': self.overall_accuracy,
        }


def _check_same_shape(a: np.ndarray, b: np.ndarray, axis: str):
    if a.shape != b.shape:
        raise ShapeError(f'{axis} {a.shape} does not match groundtruth {b.shape}', axis=axis,
                         expected=b.shape, got=a.shape)


def confusion(pred: np.ndarray, gt: np.ndarray, valid: np.ndarray = None) -> ConfusionCounts:
    """Pixel confusion counts of a predicted shadow mask against the groundtruth."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    _check_same_shape(pred, gt, 'prediction')
    if valid is None:
        valid = np.ones(gt.shape, dtype=bool)
    else:
        valid = np.asarray(valid, dtype=bool)
        _check_same_shape(valid, gt, 'valid mask')
    return ConfusionCounts(
        tp=int(np.sum(pred & gt & valid)),
        fp=int(np.sum(pred & ~gt & valid)),
        tn=int(np.sum(~pred & ~gt & valid)),
        fn=int(np.sum(~pred & gt & valid)),
    )


# ============================================================
#  ROC
# ============================================================

def exact_roc(scores: np.ndarray, gt: np.ndarray) -> tuple:
    """(FPR, TPR) at every distinct score level, from (0, 0) to (1, 1)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    gt = np.asarray(gt, dtype=bool).ravel()
    order = np.argsort(-scores, kind='stable')
    scores, gt = scores[order], gt[order]
    # last index of each run of equal scores
    cut = np.r_[np.nonzero(np.diff(scores))[0], len(scores) - 1]
    tps = np.cumsum(gt)[cut]
    fps = np.cumsum(~gt)[cut]
    tpr = np.r_[0.0, tps / max(int(gt.sum()), 1)]
    fpr = np.r_[0.0, fps / max(int((~gt).sum()), 1)]
    return fpr, tpr


def roc_auc(soft: np.ndarray, gt: np.ndarray, n_thresholds: int = 256) -> tuple:
    """Threshold-grid ROC curve and AUC.

    Returns (list of (threshold, FPR, TPR) rows over a uniform grid on [0, 1]
    bracketed by (0, 0) and (1, 1), AUC). The AUC is integrated over the exact
    curve so it only depends on the ranking of scores; it is None when the
    groundtruth holds a single class.
    """
    if n_thresholds < 2:
        raise ValueError('n_thresholds must be at least 2')
    soft = np.asarray(soft, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    _check_same_shape(soft, gt, 'soft map')
    positives = int(gt.sum())
    negatives = gt.size - positives

    rows = [(float('inf'), 0.0, 0.0)]
    for t in np.linspace(0.0, 1.0, n_thresholds)[::-1]:
        hit = soft >= t
        tpr = np.sum(hit & gt) / positives if positives else 0.0
        fpr = np.sum(hit & ~gt) / negatives if negatives else 0.0
        rows.append((float(t), float(fpr), float(tpr)))
    rows.append((float('-inf'), 1.0, 1.0))

    if positives == 0 or negatives == 0:
        return rows, None
    fpr, tpr = exact_roc(soft, gt)
    return rows, float(trapezoid(tpr, fpr))


def write_roc_csv(rows: list, path: str):
    write_csv(path, ['threshold', 'fpr', 'tpr'], rows)


# ============================================================
#  EDGE NOISE
# ============================================================

def count_isolated_pixels(edge_map: np.ndarray) -> int:
    """Number of 8-connected components made of exactly one pixel."""
    labels, count = ndimage.label(np.asarray(edge_map, dtype=bool), structure=np.ones((3, 3), dtype=bool))
    if count == 0:
        return 0
    sizes = np.bincount(labels.ravel())[1:]
    return int(np.sum(sizes == 1))


# ============================================================
#  AGGREGATION AND REPORTS
# ============================================================

def image_metrics(pred: np.ndarray, gt: np.ndarray, soft: np.ndarray = None,
                  n_thresholds: int = 256) -> dict:
    """Confusion-based metrics of one image, plus AUC when a soft map is given."""
    counts = confusion(pred, gt)
    metrics = counts.to_dict()
    if soft is not None:
        _, metrics['auc'] = roc_auc(soft, gt, n_thresholds)
    return metrics


def _mean(values: list) -> Optional[float]:
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def aggregate(per_image: dict) -> dict:
    """Per-image means and pixel-pooled accuracies over ``{stem: image_metrics}``."""
    stems = sorted(per_image)
    pooled = ConfusionCounts()
    for stem in stems:
        m = per_image[stem]
        pooled = pooled + ConfusionCounts(m['tp'], m['fp'], m['tn'], m['fn'])
    keys = ('shadow_accuracy', 'non_shadow_accuracy', 'overall_accuracy', 'auc')
    return {
        'images': len(stems),
        'mean_per_image': {k: _mean([per_image[s].get(k) for s in stems]) for k in keys},
        'pooled': pooled.to_dict(),
    }


def build_report(metrics: dict, config: dict) -> dict:
    return {
        'tool': {'name': TOOL_NAME, 'version': __version__},
        'config': dict(config),
        'metrics': dict(metrics),
        'literature_reference': LITERATURE_REFERENCE,
    }


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError(f'cannot serialize {type(value).__name__}')


def write_report(metrics: dict, config: dict, path: str) -> dict:
    """Write metrics, the resolved config, tool version and the literature reference as JSON."""
    report = build_report(metrics, config)
    ensure_dir(path)
    with open(path, 'w') as f:
        json.dump(report, f, indent=2, sort_keys=True, default=_json_default)
        f.write('\n')
    return report


def load_report(path: str) -> dict:
    with open(path) as f:
        return json.load(f)
