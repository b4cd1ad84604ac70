"""Fidelity Metrics -- bit recovery, geometric distortion and ROC statistics.

Provides:
    - bit_accuracy / ber / iou_bits over two equal-length watermarks
    - chamfer: symmetric sum of mean nearest-neighbour distances (k-d tree)
    - psnr: correspondence-sensitive PSNR with a fixed peak and a dB cap
    - roc_auc / roc_curve: Mann-Whitney AUC and the threshold sweep
    - MetricSample + aggregate(): per-cloud record and (mean, std) reduction
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import rankdata

from point_watermark import watermark_config as cfg
from point_watermark.block_svd import Watermark
from point_watermark.errors import EmptyCloud, EmptyScoreSet, LengthMismatch


@dataclass(frozen=True)
class MetricSample:
    """All metrics for one (cloud, attack, decoder) triple."""

    accuracy: float
    ber: float
    iou: float
    chamfer: float
    psnr: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


METRIC_FIELDS = tuple(f.name for f in fields(MetricSample))


# ---------------------------------------------------------------------------
# Bit metrics
# ---------------------------------------------------------------------------

def _bit_pair(w: Any, w_hat: Any) -> Tuple[np.ndarray, np.ndarray]:
    a = Watermark.coerce(w).as_array()
    b = Watermark.coerce(w_hat).as_array()
    if len(a) != len(b):
        raise LengthMismatch(f"watermarks have {len(a)} and {len(b)} bits")
    return a, b


def bit_accuracy(w: Any, w_hat: Any) -> float:
    a, b = _bit_pair(w, w_hat)
    return float(np.count_nonzero(a == b)) / len(a)


def ber(w: Any, w_hat: Any) -> float:
    return 1.0 - bit_accuracy(w, w_hat)


def iou_bits(w: Any, w_hat: Any) -> float:
    """Jaccard overlap of the 1-bit positions; 1.0 when neither has a 1."""
    a, b = _bit_pair(w, w_hat)
    union = np.count_nonzero((a == 1) | (b == 1))
    if union == 0:
        return 1.0
    return float(np.count_nonzero((a == 1) & (b == 1))) / union


# ---------------------------------------------------------------------------
# Geometric metrics
# ---------------------------------------------------------------------------

def _points(cloud: Any, name: str) -> np.ndarray:
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise EmptyCloud(f"{name} cloud is empty")
    return pts


def chamfer(a: Any, b: Any) -> float:
    """Mean NN distance a->b plus mean NN distance b->a (non-squared)."""
    pa, pb = _points(a, "first"), _points(b, "second")
    d_ab, _ = cKDTree(pb).query(pa, k=1)
    d_ba, _ = cKDTree(pa).query(pb, k=1)
    return float(np.mean(d_ab)) + float(np.mean(d_ba))


def psnr(original: Any, attacked: Any, peak: float = cfg.PSNR_PEAK) -> float:
    """10*log10(peak^2 / MSE), index-wise when counts match, else NN from attacked."""
    po, pa = _points(original, "original"), _points(attacked, "attacked")
    if len(po) == len(pa):
        sq = ((po - pa) ** 2).sum(axis=1)
    else:
        d, _ = cKDTree(po).query(pa, k=1)
        sq = d ** 2
    mse = float(np.mean(sq))
    if mse == 0.0:
        return cfg.PSNR_CAP_DB
    return min(10.0 * math.log10(peak * peak / mse), cfg.PSNR_CAP_DB)


# ---------------------------------------------------------------------------
# ROC
# ---------------------------------------------------------------------------

def _scores(values: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptyScoreSet(f"no {name} scores")
    return arr


def roc_auc(positive_scores: Sequence[float], negative_scores: Sequence[float]) -> float:
    """P(pos > neg) + 0.5 * P(pos == neg) via the rank-sum statistic."""
    pos = _scores(positive_scores, "positive")
    neg = _scores(negative_scores, "negative")
    ranks = rankdata(np.concatenate([pos, neg]))  # ties get their average rank
    n_pos, n_neg = len(pos), len(neg)
    u = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(
    positive_scores: Sequence[float], negative_scores: Sequence[float]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thresholds (descending, leading +inf) with the TPR/FPR of ``score >= threshold``."""
    pos = np.sort(_scores(positive_scores, "positive"))
    neg = np.sort(_scores(negative_scores, "negative"))
    distinct = np.unique(np.concatenate([pos, neg]))[::-1]
    thresholds = np.concatenate([[np.inf], distinct])
    tpr = (len(pos) - np.searchsorted(pos, thresholds, side="left")) / len(pos)
    fpr = (len(neg) - np.searchsorted(neg, thresholds, side="left")) / len(neg)
    return thresholds, tpr.astype(np.float64), fpr.astype(np.float64)


# ---------------------------------------------------------------------------
# Bundling and aggregation
# ---------------------------------------------------------------------------

def metric_sample(w: Any, w_hat: Any, reference: Any, attacked: Any) -> MetricSample:
    """Bit metrics of ``w_hat`` against ``w`` plus geometry of ``attacked`` against ``reference``."""
    acc = bit_accuracy(w, w_hat)
    return MetricSample(
        accuracy=acc,
        ber=1.0 - acc,
        iou=iou_bits(w, w_hat),
        chamfer=chamfer(reference, attacked),
        psnr=psnr(reference, attacked),
    )


def aggregate(samples: Sequence[MetricSample]) -> Dict[str, Tuple[float, float]]:
    """Per-field (mean, population std) over ``samples``."""
    if not samples:
        raise EmptyScoreSet("cannot aggregate zero samples")
    out: Dict[str, Tuple[float, float]] = {}
    for name in METRIC_FIELDS:
        values = np.array([getattr(s, name) for s in samples], dtype=np.float64)
        out[name] = (float(values.mean()), float(values.std()))
    return out
