import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jitmask.imaging import BinaryMask
from jitmask.metrics import MetricReport, iou, iou_acc, mean_metric, pixel_accuracy

from conftest import random_mask
from reference import iou_acc_reference, iou_reference, pixel_accuracy_reference


def mask_from_rows(rows):
    bits = np.array(rows, dtype=bool)
    return BinaryMask(bits.shape[1], bits.shape[0], bits)


class TestIoU:
    def test_identical_nonempty(self, rng):
        m = random_mask(rng, 6, 6)
        if not m.bits.any():
            m = mask_from_rows([[1]])
        assert iou(m, m) == 1.0

    def test_disjoint(self):
        a = mask_from_rows([[1, 0], [0, 0]])
        b = mask_from_rows([[0, 0], [0, 1]])
        assert iou(a, b) == 0.0

    def test_overlapping_blocks(self):
        # pred block shares 2 of its 4 pixels with gt block: 2 / 6
        pred = np.zeros((4, 4), dtype=bool)
        pred[0:2, 0:2] = True
        gt = np.zeros((4, 4), dtype=bool)
        gt[1:3, 0:2] = True
        value = iou(BinaryMask(4, 4, pred), BinaryMask(4, 4, gt))
        assert value == pytest.approx(2 / 6)

    def test_both_empty_is_one(self):
        empty = mask_from_rows([[0, 0], [0, 0]])
        assert iou(empty, empty) == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            iou(mask_from_rows([[1]]), mask_from_rows([[1, 0]]))

    def test_symmetry(self, rng):
        for _ in range(20):
            a = random_mask(rng, 5, 7)
            b = random_mask(rng, 5, 7)
            assert iou(a, b) == iou(b, a)
            assert pixel_accuracy(a, b) == pixel_accuracy(b, a)


class TestPixelAccuracy:
    def test_identical(self, rng):
        m = random_mask(rng, 8, 8)
        assert pixel_accuracy(m, m) == 1.0

    def test_complement(self, rng):
        m = random_mask(rng, 8, 8)
        inv = BinaryMask(8, 8, ~m.bits)
        assert pixel_accuracy(m, inv) == 0.0

    def test_counts_example(self):
        # 10x10, gt 4 px, pred 4 px, 2 overlapping: symmetric difference 4 -> 0.96
        gt = np.zeros((10, 10), dtype=bool)
        gt[0, 0:4] = True
        pred = np.zeros((10, 10), dtype=bool)
        pred[0, 2:6] = True
        value = pixel_accuracy(BinaryMask(10, 10, pred), BinaryMask(10, 10, gt))
        assert value == pytest.approx(0.96)


class TestIoUAcc:
    def test_empty_both(self):
        empty = mask_from_rows([[0] * 10] * 10)
        report = iou_acc(empty, empty)
        assert report.iou_acc == 1.0
        assert report.used_accuracy_branch

    def test_small_gt_uses_accuracy(self):
        # gt 2 of 100 pixels = 2% < 5%
        gt = np.zeros((10, 10), dtype=bool)
        gt[0, :2] = True
        m = BinaryMask(10, 10, gt)
        report = iou_acc(m, m)
        assert report.iou_acc == 1.0
        assert report.used_accuracy_branch
        assert report.gt_area_fraction == pytest.approx(0.02)

    def test_large_gt_uses_iou(self):
        gt = np.zeros((10, 10), dtype=bool)
        gt[:5, :] = True
        m = BinaryMask(10, 10, gt)
        report = iou_acc(m, m)
        assert report.iou_acc == 1.0
        assert not report.used_accuracy_branch

    def test_boundary_is_strict_less_than(self):
        # exactly 5 of 100 pixels: NOT below 5%, so the IoU branch fires
        gt = np.zeros((10, 10), dtype=bool)
        gt[0, :5] = True
        report = iou_acc(BinaryMask(10, 10, gt), BinaryMask(10, 10, gt), area_threshold=0.05)
        assert not report.used_accuracy_branch

    def test_invalid_threshold(self):
        m = mask_from_rows([[1]])
        with pytest.raises(ValueError):
            iou_acc(m, m, area_threshold=0.0)
        with pytest.raises(ValueError):
            iou_acc(m, m, area_threshold=1.0)

    @settings(max_examples=150, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 10**6))
    def test_matches_brute_force(self, w, h, seed):
        rng = np.random.default_rng(seed)
        pred = random_mask(rng, w, h, p=rng.random())
        gt = random_mask(rng, w, h, p=rng.random())
        report = iou_acc(pred, gt)
        value, used_acc, fraction = iou_acc_reference(
            pred.bits.ravel().tolist(), gt.bits.ravel().tolist()
        )
        assert report.iou_acc == value
        assert report.used_accuracy_branch == used_acc
        assert report.gt_area_fraction == fraction
        assert iou(pred, gt) == iou_reference(pred.bits.ravel().tolist(), gt.bits.ravel().tolist())
        assert pixel_accuracy(pred, gt) == pixel_accuracy_reference(
            pred.bits.ravel().tolist(), gt.bits.ravel().tolist()
        )


class TestMeanMetric:
    def test_single(self):
        assert mean_metric([MetricReport(1.0, False, 0.5)]) == 1.0

    def test_pair(self):
        reports = [MetricReport(1.0, False, 0.5), MetricReport(0.0, False, 0.5)]
        assert mean_metric(reports) == 0.5

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mean_metric([])

    def test_matches_sum_oracle(self, rng):
        values = rng.random(100)
        reports = [MetricReport(float(v), False, 0.5) for v in values]
        naive = 0.0
        for v in values:
            naive += float(v)
        assert mean_metric(reports) == pytest.approx(naive / 100, abs=1e-12)
