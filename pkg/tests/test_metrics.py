import numpy as np
import pytest

from evseg.events import EventWindow
from evseg.metrics import (EvalReport, LengthMismatch, box_iou,
                           detection_rate, evaluate, event_iou,
                           format_report, format_report_csv)


def window_from_positions(xs, ys, width=240, height=180):
    n = len(xs)
    return EventWindow(np.asarray(xs), np.asarray(ys),
                       np.arange(n, dtype=np.int64), np.ones(n, dtype=int),
                       0, max(n, 1), width, height)


class TestEventIou:
    def test_identical_labelings(self):
        labels = np.array([0, 0, 1, 1, 2, 0])
        r = event_iou(labels, labels)
        assert all(v == 1.0 for v in r.per_object_iou.values())
        assert r.mean_iou == 1.0

    def test_disjoint_clusters(self):
        pred = np.array([0, 0, 1, 1])
        gt = np.array([1, 1, 0, 0])
        # greedy matching pairs pred 0 with gt 1 at zero... overlap pairing
        # matches pred 0 <-> gt 1 and pred 1 <-> gt 0 with full overlap
        r = event_iou(pred, gt)
        assert r.mean_iou == 1.0
        # truly disjoint: prediction says outlier everywhere
        r2 = event_iou(np.full(4, -1), gt)
        assert r2.mean_iou == 0.0

    def test_one_third_example(self):
        # object cluster pred {e1,e2}, gt {e2,e3}: IoU = 1/3
        pred = np.array([1, 1, 0, 0])
        gt = np.array([0, 1, 1, 0])
        r = event_iou(pred, gt)
        assert r.per_object_iou[1] == pytest.approx(1 / 3)

    def test_label_permutation_invariance(self):
        rng = np.random.default_rng(0)
        gt = rng.integers(0, 3, 60)
        pred = rng.integers(0, 3, 60)
        r1 = event_iou(pred, gt)
        perm = np.array([2, 0, 1])
        r2 = event_iou(perm[pred], gt)
        assert r1.mean_iou == pytest.approx(r2.mean_iou)
        assert sorted(r1.per_object_iou.values()) == pytest.approx(
            sorted(r2.per_object_iou.values()))

    def test_adding_correct_events_never_hurts(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n = 40
            gt = rng.integers(0, 3, n)
            pred = np.where(rng.uniform(size=n) < 0.3,
                            rng.integers(0, 3, n), gt)
            base = event_iou(pred, gt)
            extra_gt = rng.integers(0, 3, 10)
            # the added events are predicted with the label matched to their
            # ground-truth cluster
            inv = {gl: pl for gl, pl in base.assignment.items()}
            extra_pred = np.array([inv.get(g, g) for g in extra_gt])
            grown = event_iou(np.concatenate([pred, extra_pred]),
                              np.concatenate([gt, extra_gt]))
            for gl, v in base.per_object_iou.items():
                assert grown.per_object_iou[gl] >= v - 1e-12

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            event_iou(np.array([0, 1]), np.array([0]))


class TestDetectionRate:
    def test_perfect_labeling(self):
        xs = np.array([10, 12, 14, 100, 102, 104, 200, 202])
        ys = np.array([10, 12, 14, 100, 102, 104, 50, 52])
        gt = np.array([0, 0, 0, 1, 1, 1, 2, 2])
        w = window_from_positions(xs, ys)
        r = detection_rate(gt, gt, w)
        assert r.detection_rate == 1.0

    def test_all_background_rate_zero(self):
        xs = np.array([10, 12, 100, 102])
        ys = np.array([10, 12, 100, 102])
        gt = np.array([0, 0, 1, 1])
        pred = np.zeros(4, dtype=int)
        r = detection_rate(pred, gt, window_from_positions(xs, ys))
        assert r.detection_rate == 0.0

    def test_half_shifted_box_misses(self):
        # box IoU of a box against itself shifted by half its width is 1/3
        a = (0.0, 0.0, 10.0, 10.0)
        b = (5.0, 0.0, 15.0, 10.0)
        assert box_iou(a, b) == pytest.approx(1 / 3)
        assert box_iou(a, b) < 0.5
        # realized with events: background + object, prediction shifted
        xs = np.concatenate([[0, 230], [100, 110], [105, 115]])
        ys = np.concatenate([[0, 170], [100, 110], [100, 110]])
        gt = np.array([0, 0, 1, 1, 1, 1])
        # predicted object covers only the shifted pair of events
        pred = np.array([0, 0, 0, 0, 1, 1])
        w = window_from_positions(xs, ys)
        gt_only = np.array([0, 0, 1, 1, 0, 0])
        r = detection_rate(pred, gt_only, w)
        assert r.detection_rate == 0.0

    def test_no_objects_vacuous(self):
        gt = np.zeros(4, dtype=int)
        w = window_from_positions([1, 2, 3, 4], [1, 2, 3, 4])
        assert detection_rate(gt, gt, w).detection_rate == 1.0


class TestReportFormats:
    def test_round_numbers_present(self):
        labels = np.array([0, 0, 1, 1])
        w = window_from_positions([1, 2, 100, 101], [1, 2, 100, 101])
        r = evaluate(labels, labels, w)
        text = format_report(r)
        assert "mean_iou=1.000000" in text
        assert "detection_rate=1.000000" in text
        csv = format_report_csv(r)
        assert "iou,0,1.000000" in csv
        assert "iou,1,1.000000" in csv
        for line in csv.strip().splitlines():
            assert len(line.split(",")) == 3
