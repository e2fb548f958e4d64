"""Loss algebra (closed forms, reductions, gradient checks), IoU, the
single-box localizer and average precision."""

import math

import numpy as np
import pytest

from ofgprn import autodiff as ad
from ofgprn.autodiff import Tensor, backward
from ofgprn.detection import (BBox, Detection, LossConfig, average_precision, ce_op,
                              consistent_ce_op, consistent_cross_entropy, cross_entropy,
                              focal_loss, focal_op, iou, localize, write_detections,
                              write_pr_curve)
from ofgprn.segmentation import Rag


def chain_rag(scores_boxes):
    """Linear chain graph with given per-node boxes."""
    n = len(scores_boxes)
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n - 1):
        adj[i, i + 1] = adj[i + 1, i] = True
    boxes = np.array([b for b in scores_boxes], dtype=np.int64)
    return Rag(adjacency=adj, features=np.zeros((n, 1)), boxes=boxes,
               areas=np.ones(n, dtype=np.int64))


class TestCrossEntropy:
    def test_perfect_positive_is_zero(self):
        assert cross_entropy(1.0, 1, 1.0) == pytest.approx(0.0, abs=1e-11)

    def test_half_probability(self):
        assert cross_entropy(0.5, 1, 1.0) == pytest.approx(math.log(2.0))

    def test_confident_wrong_negative(self):
        assert cross_entropy(0.9, -1, 1.0) == pytest.approx(-math.log(0.1))

    def test_lambda_scales(self):
        assert cross_entropy(0.5, 1, 3.0) == pytest.approx(3.0 * math.log(2.0))

    def test_clamping_keeps_finite(self):
        assert np.isfinite(cross_entropy(0.0, 1, 1.0))
        assert np.isfinite(cross_entropy(1.0, -1, 1.0))


class TestConsistentCrossEntropy:
    def test_closed_gate_reduces_to_cross_entropy(self):
        cfg = LossConfig(lambda1=1.3, lambda2=2.0, iou_gate=0.5)
        for o_k in (0.0, 0.25, 0.5):
            for (p, t) in ((0.3, 1), (0.8, -1)):
                assert consistent_cross_entropy(p, t, o_k, cfg) == pytest.approx(
                    cross_entropy(p, t, cfg.lambda1))

    def test_zero_lambda2_reduces_for_any_overlap(self):
        cfg = LossConfig(lambda1=0.7, lambda2=0.0, iou_gate=0.5)
        for o_k in (0.0, 0.6, 1.0):
            assert consistent_cross_entropy(0.4, 1, o_k, cfg) == pytest.approx(
                cross_entropy(0.4, 1, cfg.lambda1))

    def test_open_gate_scale(self):
        cfg = LossConfig(lambda1=1.0, lambda2=2.0, iou_gate=0.5)
        # scale = 1 + 2 * (0.9 - 0.5) = 1.8
        assert consistent_cross_entropy(0.5, 1, 0.9, cfg) == pytest.approx(
            1.8 * math.log(2.0))

    def test_open_gate_dominates_cross_entropy(self):
        cfg = LossConfig(lambda1=1.0, lambda2=1.5, iou_gate=0.4)
        rng = np.random.default_rng(0)
        for _ in range(200):
            p = float(rng.uniform(0.01, 0.99))
            t = 1 if rng.random() < 0.5 else -1
            o_k = float(rng.uniform(0.4 + 1e-9, 1.0))
            assert consistent_cross_entropy(p, t, o_k, cfg) >= cross_entropy(
                p, t, cfg.lambda1) - 1e-12


class TestFocalLoss:
    def test_gamma_zero_equals_cross_entropy_on_grid(self):
        lam = 0.8
        cfg = LossConfig(gamma=0.0, alpha_t=lam, lambda1=lam)
        ps = np.linspace(1e-6, 1 - 1e-6, 1000)
        for t in (1, -1):
            fl = focal_loss(ps, t, cfg)
            ce = cross_entropy(ps, t, lam)
            assert np.abs(fl - ce).max() <= 1e-12

    def test_certain_prediction_is_zero(self):
        cfg = LossConfig(gamma=2.0, alpha_t=1.0)
        assert focal_loss(1.0, 1, cfg) == pytest.approx(0.0, abs=1e-11)

    def test_half_probability_gamma_two(self):
        cfg = LossConfig(gamma=2.0, alpha_t=1.0)
        assert focal_loss(0.5, 1, cfg) == pytest.approx(0.25 * math.log(2.0))

    def test_monotone_nonincreasing_in_pt(self):
        cfg = LossConfig(gamma=1.5, alpha_t=1.0)
        ps = np.linspace(0.01, 0.99, 500)
        losses = focal_loss(ps, 1, cfg)
        assert np.all(np.diff(losses) <= 1e-12)

    def test_gamma_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            LossConfig(gamma=2.5)


class TestLossGradients:
    @pytest.mark.parametrize("make", [
        lambda p: ce_op(p, np.array([[1.0], [-1.0], [1.0]]), 1.4),
        lambda p: consistent_ce_op(p, np.array([[1.0], [-1.0], [1.0]]),
                                   np.array([[0.9], [0.2], [0.6]]),
                                   LossConfig(lambda1=1.0, lambda2=2.0, iou_gate=0.5)),
        lambda p: focal_op(p, np.array([[1.0], [-1.0], [1.0]]),
                           LossConfig(gamma=2.0, alpha_t=0.7)),
        lambda p: focal_op(p, np.array([[1.0], [-1.0], [1.0]]),
                           LossConfig(gamma=0.0, alpha_t=1.0)),
    ], ids=["ce", "consistent_ce", "focal_g2", "focal_g0"])
    def test_gradient_matches_finite_differences(self, make):
        p = Tensor(np.array([[0.3], [0.7], [0.55]]), requires_grad=True)
        loss = ad.mean_all(make(p))
        backward(loss)
        analytic = p.grad.copy()
        h = 1e-7
        flat = p.value.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = float(ad.mean_all(make(p)).value)
            flat[i] = orig - h
            lm = float(ad.mean_all(make(p)).value)
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            rel = abs(fd - analytic.ravel()[i]) / max(abs(fd), abs(analytic.ravel()[i]))
            assert rel < 1e-6


class TestIou:
    def test_identical_boxes(self):
        box = BBox(1.0, 2.0, 5.0, 7.0)
        assert iou(box, box) == pytest.approx(1.0)

    def test_disjoint_boxes(self):
        assert iou(BBox(0, 0, 1, 1), BBox(2, 2, 3, 3)) == 0.0

    def test_half_offset_unit_squares(self):
        assert iou(BBox(0, 0, 1, 1), BBox(0.5, 0, 1.5, 1)) == pytest.approx(1.0 / 3.0)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            a = np.sort(rng.uniform(0, 10, 4))
            b = np.sort(rng.uniform(0, 10, 4))
            box_a = BBox(a[0], a[1], a[2], a[3])
            box_b = BBox(b[0], b[1], b[2], b[3])
            assert iou(box_a, box_b) == pytest.approx(iou(box_b, box_a))
            assert 0.0 <= iou(box_a, box_b) <= 1.0


class TestLocalize:
    def test_one_hot_scores_pick_that_box(self):
        rag = chain_rag([(0, 0, 2, 2), (2, 0, 4, 2), (4, 0, 6, 2)])
        det = localize(np.array([0.0, 1.0, 0.0]), rag)
        assert det.box == BBox(2.0, 0.0, 4.0, 2.0)
        assert det.score == 1.0

    def test_all_equal_scores_tie_to_node_zero(self):
        rag = chain_rag([(0, 0, 2, 2), (2, 0, 4, 2), (4, 0, 6, 2)])
        det = localize(np.full(3, 0.5), rag)
        # node 0 wins the tie; its neighbor also reaches the expand bar
        assert det.box.x_min == 0.0

    def test_chain_expansion_unions_strong_neighbor(self):
        rag = chain_rag([(0, 0, 2, 2), (2, 0, 4, 2), (4, 0, 6, 2)])
        det = localize(np.array([0.9, 0.8, 0.1]), rag, expand_threshold=0.8)
        assert det.box == BBox(0.0, 0.0, 4.0, 2.0)  # nodes 0 and 1, not 2
        assert det.score == pytest.approx(0.9)

    def test_expansion_only_uses_direct_neighbors(self):
        rag = chain_rag([(0, 0, 2, 2), (2, 0, 4, 2), (4, 0, 6, 2)])
        det = localize(np.array([0.9, 0.1, 0.89]), rag, expand_threshold=0.8)
        # node 2 scores above the bar but is not adjacent to node 0
        assert det.box == BBox(0.0, 0.0, 2.0, 2.0)

    def test_invariant_under_positive_scaling(self):
        rag = chain_rag([(0, 0, 2, 2), (2, 0, 4, 2), (4, 0, 6, 2)])
        scores = np.array([0.2, 0.5, 0.3])
        base = localize(scores, rag)
        scaled = localize(scores * 7.5, rag)
        assert base.box == scaled.box

    def test_empty_graph_rejected(self):
        rag = chain_rag([(0, 0, 1, 1)])
        with pytest.raises(ValueError):
            localize(np.array([]), rag)


class TestAveragePrecision:
    def test_perfect_detections(self):
        truth = {i: BBox(0, 0, 2, 2) for i in range(5)}
        dets = [Detection(BBox(0, 0, 2, 2), 0.9 - 0.1 * i, i) for i in range(5)]
        assert average_precision(dets, truth) == pytest.approx(1.0)

    def test_no_detections(self):
        truth = {0: BBox(0, 0, 2, 2)}
        assert average_precision([], truth) == 0.0

    def test_duplicate_on_matched_truth_is_false_positive(self):
        truth = {1: BBox(0, 0, 2, 2), 2: BBox(0, 0, 2, 2)}
        dets = [Detection(BBox(0, 0, 2, 2), 0.9, 1),
                Detection(BBox(0, 0, 2, 2), 0.8, 1)]  # frame 1 GT already matched
        assert average_precision(dets, truth) == pytest.approx(0.5)

    def test_invariant_under_monotone_score_transform(self):
        rng = np.random.default_rng(2)
        truth = {i: BBox(0, 0, 2, 2) for i in range(8)}
        dets = []
        for i in range(8):
            good = rng.random() < 0.6
            box = BBox(0, 0, 2, 2) if good else BBox(5, 5, 6, 6)
            dets.append(Detection(box, float(rng.uniform(0.1, 0.9)), i))
        base = average_precision(dets, truth)
        transformed = [Detection(d.box, 2.0 * d.score + 1.0, d.frame_id) for d in dets]
        assert average_precision(transformed, truth) == pytest.approx(base)

    def test_empty_truth_rejected(self):
        with pytest.raises(ValueError):
            average_precision([], {})

    def test_iou_threshold_respected(self):
        truth = {0: BBox(0, 0, 2, 2)}
        dets = [Detection(BBox(0, 0, 1, 2), 0.9, 0)]  # IoU exactly 0.5
        assert average_precision(dets, truth, iou_thr=0.5) == pytest.approx(1.0)
        assert average_precision(dets, truth, iou_thr=0.51) == 0.0


class TestRecords:
    def test_detection_and_pr_exports(self, tmp_path):
        truth = {0: BBox(0, 0, 2, 2), 1: BBox(4, 4, 6, 6)}
        dets = [Detection(BBox(0, 0, 2, 2), 0.9, 0), Detection(BBox(0, 0, 2, 2), 0.4, 1)]
        det_path = tmp_path / "detections.txt"
        pr_path = tmp_path / "pr.csv"
        write_detections(det_path, dets, truth)
        write_pr_curve(pr_path, dets, truth)
        lines = det_path.read_text().splitlines()
        assert lines[0] == "detections 2"
        assert "matched 1" in lines[1]
        assert "matched 0" in lines[2]
        rows = pr_path.read_text().splitlines()
        assert rows[0] == "recall,precision"
        assert len(rows) == 3
