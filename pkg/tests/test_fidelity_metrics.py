"""Tests for point_watermark.fidelity_metrics.

Covers:
    - bit_accuracy / ber / iou_bits, including the empty-union convention
    - chamfer: hand-computed clouds, brute-force oracle, exact symmetry, rigid invariance
    - psnr: index-wise, nearest-neighbour fallback, the 99 dB cap, falls as noise grows
    - roc_auc / roc_curve: ties, hand-computed sweeps, area agreement, antisymmetry, constant scores
    - metric_sample and aggregate
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from point_watermark.block_svd import Watermark
from point_watermark.errors import EmptyCloud, EmptyScoreSet, LengthMismatch
from point_watermark.fidelity_metrics import (
    METRIC_FIELDS,
    MetricSample,
    aggregate,
    ber,
    bit_accuracy,
    chamfer,
    iou_bits,
    metric_sample,
    psnr,
    roc_auc,
    roc_curve,
)


def trapezoid_area(fpr: np.ndarray, tpr: np.ndarray) -> float:
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def brute_chamfer(a: np.ndarray, b: np.ndarray) -> float:
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


def random_rigid(rng: np.random.Generator):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q, rng.uniform(-2.0, 2.0, size=3)


# ═══════════════════════════════════════════════════════════════════════════════
# Bit metrics
# ═══════════════════════════════════════════════════════════════════════════════


class TestBitMetrics:
    """Accuracy, bit error rate and IoU."""

    def test_accuracy_and_ber(self):
        assert bit_accuracy("1011", "1001") == 0.75
        assert ber("1011", "1001") == pytest.approx(0.25)

    def test_accepts_watermarks_and_sequences(self):
        assert bit_accuracy(Watermark.from_string("110"), np.array([1, 1, 0])) == 1.0

    def test_iou(self):
        assert iou_bits("1100", "1010") == pytest.approx(1 / 3)
        assert iou_bits("1111", "1111") == 1.0
        assert iou_bits("1000", "0100") == 0.0

    def test_iou_with_no_ones_is_one(self):
        assert iou_bits("000", "000") == 1.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            bit_accuracy("101", "10")
        with pytest.raises(LengthMismatch):
            iou_bits("1", "11")


# ═══════════════════════════════════════════════════════════════════════════════
# Geometry
# ═══════════════════════════════════════════════════════════════════════════════


class TestChamfer:
    """Chamfer distance against a brute-force reference."""

    def test_single_points(self):
        assert chamfer([[0, 0, 0]], [[3, 4, 0]]) == pytest.approx(10.0)

    def test_uneven_sets(self):
        a = [[0, 0, 0], [1, 0, 0]]
        b = [[0, 0, 0]]
        assert chamfer(a, b) == pytest.approx(0.5)
        assert chamfer(b, a) == pytest.approx(0.5)

    def test_identical_is_zero(self, make_cloud):
        pts = make_cloud(200)
        assert chamfer(pts, pts[::-1]) == 0.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            a = rng.normal(size=(int(rng.integers(1, 120)), 3))
            b = rng.normal(size=(int(rng.integers(1, 120)), 3))
            assert abs(chamfer(a, b) - brute_chamfer(a, b)) <= 1e-12

    def test_symmetry_is_exact(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            a, b = rng.normal(size=(70, 3)), rng.normal(size=(45, 3))
            assert chamfer(a, b) == chamfer(b, a)

    def test_rigid_motion_of_both_clouds(self, make_cloud):
        rng = np.random.default_rng(13)
        a = make_cloud(300, seed=1)
        b = a[:200] + rng.normal(0.0, 0.02, size=(200, 3))
        q, t = random_rigid(rng)
        assert chamfer(a @ q.T + t, b @ q.T + t) == pytest.approx(chamfer(a, b), abs=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyCloud):
            chamfer(np.zeros((0, 3)), [[0, 0, 0]])


class TestPsnr:
    """Geometric PSNR with paired and unpaired points."""

    def test_index_wise(self):
        original = np.zeros((2, 3))
        attacked = original + [0.1, 0.0, 0.0]
        assert psnr(original, attacked) == pytest.approx(10 * math.log10(400.0))

    def test_index_wise_sees_permutation(self, make_cloud):
        pts = make_cloud(100)
        assert psnr(pts, pts[::-1]) < 99.0

    def test_nearest_neighbour_when_counts_differ(self):
        original = [[0, 0, 0], [1, 0, 0]]
        attacked = [[0.1, 0, 0]]
        assert psnr(original, attacked) == pytest.approx(10 * math.log10(400.0))

    def test_identical_and_tiny_error_are_capped(self):
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        assert psnr(pts, pts) == 99.0
        assert psnr(pts, pts + 1e-7) == 99.0

    def test_rigid_motion_of_both_clouds(self, make_cloud):
        rng = np.random.default_rng(14)
        a = make_cloud(300, seed=2)
        b = a + rng.normal(0.0, 0.01, size=a.shape)
        q, t = random_rigid(rng)
        assert psnr(a @ q.T + t, b @ q.T + t) == pytest.approx(psnr(a, b), abs=1e-9)

    def test_falls_as_noise_grows(self, make_cloud):
        pts = make_cloud(500, seed=3)
        direction = np.random.default_rng(15).normal(size=pts.shape)
        values = [psnr(pts, pts + sigma * direction) for sigma in (0.001, 0.003, 0.01, 0.03, 0.1, 0.3)]
        assert all(later < earlier for earlier, later in zip(values, values[1:]))
        assert values[0] < 99.0

    def test_custom_peak(self):
        original = np.zeros((1, 3))
        attacked = np.array([[1.0, 0.0, 0.0]])
        assert psnr(original, attacked, peak=10.0) == pytest.approx(20.0)


# ═══════════════════════════════════════════════════════════════════════════════
# ROC
# ═══════════════════════════════════════════════════════════════════════════════


class TestRoc:
    """Rank-based AUC and the ROC curve."""

    def test_perfect_and_inverted(self):
        assert roc_auc([0.9, 0.8], [0.1, 0.2]) == 1.0
        assert roc_auc([0.1, 0.2], [0.9, 0.8]) == 0.0

    def test_ties_count_half(self):
        assert roc_auc([0.5, 0.5], [0.5]) == 0.5
        assert roc_auc([1.0, 0.5], [0.5, 0.0]) == pytest.approx(0.875)

    def test_curve_by_hand(self):
        thresholds, tpr, fpr = roc_curve([0.9, 0.4], [0.4, 0.1])
        assert thresholds[0] == np.inf
        np.testing.assert_array_equal(thresholds[1:], [0.9, 0.4, 0.1])
        np.testing.assert_array_equal(tpr, [0.0, 0.5, 1.0, 1.0])
        np.testing.assert_array_equal(fpr, [0.0, 0.0, 0.5, 1.0])

    def test_curve_area_matches_auc(self):
        rng = np.random.default_rng(3)
        pos = np.round(rng.normal(1.0, 1.0, 60), 1)
        neg = np.round(rng.normal(0.0, 1.0, 45), 1)
        _, tpr, fpr = roc_curve(pos, neg)
        assert trapezoid_area(fpr, tpr) == pytest.approx(roc_auc(pos, neg))

    def test_curve_is_monotone(self):
        rng = np.random.default_rng(4)
        _, tpr, fpr = roc_curve(rng.random(30), rng.random(20))
        assert np.all(np.diff(tpr) >= 0) and np.all(np.diff(fpr) >= 0)
        assert tpr[-1] == 1.0 and fpr[-1] == 1.0

    def test_negated_scores_give_complement(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            pos = np.round(rng.normal(0.3, 1.0, int(rng.integers(1, 80))), 1)
            neg = np.round(rng.normal(0.0, 1.0, int(rng.integers(1, 80))), 1)
            assert roc_auc(pos, neg) + roc_auc(-pos, -neg) == pytest.approx(1.0, abs=1e-12)

    def test_constant_scores_at_500_pairs(self):
        assert roc_auc(np.full(500, 0.7), np.full(500, 0.7)) == 0.5

    def test_empty_scores(self):
        with pytest.raises(EmptyScoreSet):
            roc_auc([], [0.1])
        with pytest.raises(EmptyScoreSet):
            roc_curve([0.1], [])


# ═══════════════════════════════════════════════════════════════════════════════
# Samples and aggregation
# ═══════════════════════════════════════════════════════════════════════════════


class TestAggregate:
    """Mean and std over metric samples."""

    def test_metric_sample(self, make_cloud):
        pts = make_cloud(100)
        sample = metric_sample("101", "100", pts, pts)
        assert sample.accuracy == pytest.approx(2 / 3)
        assert sample.ber == pytest.approx(1 / 3)
        assert sample.iou == 0.5
        assert sample.chamfer == 0.0
        assert sample.psnr == 99.0

    def test_mean_and_population_std(self):
        samples = [
            MetricSample(accuracy=1.0, ber=0.0, iou=1.0, chamfer=0.0, psnr=99.0),
            MetricSample(accuracy=0.5, ber=0.5, iou=0.0, chamfer=0.2, psnr=41.0),
        ]
        stats = aggregate(samples)
        assert set(stats) == set(METRIC_FIELDS)
        assert stats["accuracy"] == pytest.approx((0.75, 0.25))
        assert stats["psnr"] == pytest.approx((70.0, 29.0))

    def test_single_sample_has_zero_std(self):
        stats = aggregate([MetricSample(0.5, 0.5, 0.25, 0.1, 30.0)])
        assert stats["iou"] == (0.25, 0.0)

    def test_empty(self):
        with pytest.raises(EmptyScoreSet):
            aggregate([])
