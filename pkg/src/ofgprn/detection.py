"""Detection losses, box overlap, localization and evaluation.

Targets t are +/-1; p is the predicted probability of the positive class.
The consistent variant scales the log term up once a candidate's overlap
with the ground truth passes the gate, so well-placed boxes dominate
training; the focal variant down-weights easy examples by (1-p_t)^gamma.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .pyramid import Hierarchy
from .segmentation import Rag

__all__ = [
    "BBox",
    "LossConfig",
    "Detection",
    "cross_entropy",
    "consistent_cross_entropy",
    "focal_loss",
    "ce_op",
    "consistent_ce_op",
    "focal_op",
    "iou",
    "localize",
    "average_precision",
    "precision_recall",
    "write_detections",
    "write_pr_curve",
]

PROB_EPS = 1e-12
DEFAULT_EXPAND_THRESHOLD = 0.8


class BBox(NamedTuple):
    """Axis-aligned box; max edges exclusive, so area = width * height."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    iou_gate: float = 0.5
    gamma: float = 2.0
    alpha_t: float = 0.25  # standard one-stage focal balance

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 2.0:
            raise ValueError(f"gamma must lie in [0, 2], got {self.gamma}")
        if not 0.0 < self.iou_gate < 1.0:
            raise ValueError(f"iou_gate must lie in (0, 1), got {self.iou_gate}")
        if self.lambda1 < 0 or self.lambda2 < 0 or self.alpha_t < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass(frozen=True)
class Detection:
    box: BBox
    score: float
    frame_id: int


def _pt(p, t):
    """Probability assigned to the true class, clamped away from {0, 1}."""
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(t)
    q = np.where(t == 1, p, 1.0 - p)
    return np.clip(q, PROB_EPS, 1.0 - PROB_EPS)


def cross_entropy(p, t, lambda1: float = 1.0):
    """Balanced binary cross-entropy: lambda1 * -log p_t."""
    out = lambda1 * -np.log(_pt(p, t))
    return float(out) if out.ndim == 0 else out


def _consistency_scale(o_k, cfg: LossConfig):
    o_k = np.asarray(o_k, dtype=np.float64)
    gate_open = o_k > cfg.iou_gate
    return cfg.lambda1 + cfg.lambda2 * (o_k - cfg.iou_gate) * gate_open


def consistent_cross_entropy(p, t, o_k, cfg: LossConfig):
    """Cross-entropy whose weight grows with overlap above the gate;
    closed gate reduces exactly to ``cross_entropy`` with lambda1."""
    out = _consistency_scale(o_k, cfg) * -np.log(_pt(p, t))
    return float(out) if out.ndim == 0 else out


def focal_loss(p, t, cfg: LossConfig):
    """-alpha_t * (1 - p_t)^gamma * log(p_t); gamma = 0 recovers
    cross-entropy with weight alpha_t."""
    q = _pt(p, t)
    out = -cfg.alpha_t * (1.0 - q) ** cfg.gamma * np.log(q)
    return float(out) if out.ndim == 0 else out


def _sign(t):
    return np.where(np.asarray(t) == 1, 1.0, -1.0)


def ce_op(p: Tensor, t, lambda1: float = 1.0) -> Tensor:
    q = _pt(p.value, t)
    value = lambda1 * -np.log(q)
    grad = lambda1 * -_sign(t) / q
    return ad.elementwise(p, value, grad, op="cross_entropy")


def consistent_ce_op(p: Tensor, t, o_k, cfg: LossConfig) -> Tensor:
    q = _pt(p.value, t)
    scale = _consistency_scale(o_k, cfg)
    value = scale * -np.log(q)
    grad = scale * -_sign(t) / q
    return ad.elementwise(p, value, grad, op="consistent_cross_entropy")


def focal_op(p: Tensor, t, cfg: LossConfig) -> Tensor:
    q = _pt(p.value, t)
    one_m = 1.0 - q
    value = -cfg.alpha_t * one_m ** cfg.gamma * np.log(q)
    if cfg.gamma == 0.0:
        dq = -cfg.alpha_t / q
    else:
        dq = cfg.alpha_t * (cfg.gamma * one_m ** (cfg.gamma - 1.0) * np.log(q)
                            - one_m ** cfg.gamma / q)
    return ad.elementwise(p, value, dq * _sign(t), op="focal_loss")


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; zero for disjoint boxes."""
    ix = max(0.0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))
    iy = max(0.0, min(a.y_max, b.y_max) - max(a.y_min, b.y_min))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min)
    area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min)
    return inter / (area_a + area_b - inter)


def localize(level_scores, rag: Rag, hierarchy: Hierarchy | None = None,
             expand_threshold: float = DEFAULT_EXPAND_THRESHOLD,
             frame_id: int = 0) -> Detection:
    """Single-box localization from finest-level node scores.

    The box of the best-scoring node grows by the boxes of its adjacent
    nodes whose score reaches expand_threshold * best; ties on the best
    score pick the lowest node id.
    """
    scores = level_scores[0] if isinstance(level_scores, (list, tuple)) else level_scores
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if rag.node_count == 0 or scores.size == 0:
        raise ValueError("empty graph")
    if scores.size != rag.node_count:
        raise ValueError(f"{scores.size} scores for {rag.node_count} nodes")
    best = int(np.argmax(scores))
    top = float(scores[best])
    box = rag.boxes[best].astype(np.float64)
    for nb in np.nonzero(rag.adjacency[best])[0]:
        if scores[nb] >= expand_threshold * top:
            nb_box = rag.boxes[nb]
            box[0] = min(box[0], nb_box[0])
            box[1] = min(box[1], nb_box[1])
            box[2] = max(box[2], nb_box[2])
            box[3] = max(box[3], nb_box[3])
    return Detection(box=BBox(*box.tolist()), score=top, frame_id=frame_id)


def _matches(detections: list[Detection], ground_truth: dict[int, BBox],
             iou_thr: float):
    order = sorted(detections, key=lambda d: (-d.score, d.frame_id))
    matched: set[int] = set()
    flags = []
    for det in order:
        gt = ground_truth.get(det.frame_id)
        ok = (gt is not None and det.frame_id not in matched
              and iou(det.box, gt) >= iou_thr)
        if ok:
            matched.add(det.frame_id)
        flags.append((det, ok))
    return flags


def precision_recall(detections: list[Detection], ground_truth: dict[int, BBox],
                     iou_thr: float = 0.5):
    """Cumulative precision/recall along the score-sorted detection list."""
    if not ground_truth:
        raise ValueError("ground truth is empty")
    flags = _matches(detections, ground_truth, iou_thr)
    tp = np.cumsum([1.0 if ok else 0.0 for _, ok in flags])
    fp = np.cumsum([0.0 if ok else 1.0 for _, ok in flags])
    recall = tp / len(ground_truth)
    precision = tp / np.maximum(tp + fp, 1e-12)
    return recall, precision


def average_precision(detections: list[Detection], ground_truth: dict[int, BBox],
                      iou_thr: float = 0.5) -> float:
    """All-point interpolated AP for the single-class task.

    A detection is a true positive when its IoU with its frame's unmatched
    ground truth reaches ``iou_thr``; every ground truth can match once.
    """
    if not ground_truth:
        raise ValueError("ground truth is empty")
    if not detections:
        return 0.0
    recall, precision = precision_recall(detections, ground_truth, iou_thr)
    mrec = np.concatenate([[0.0], recall, [recall[-1]]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    changed = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changed + 1] - mrec[changed]) * mpre[changed + 1]))


def write_detections(path, detections: list[Detection], ground_truth: dict[int, BBox],
                     iou_thr: float = 0.5) -> None:
    """Structured-text record per detection: frame, box, score, matched."""
    flags = _matches(detections, ground_truth, iou_thr)
    lines = [f"detections {len(flags)}"]
    for det, ok in flags:
        box = " ".join(repr(float(v)) for v in det.box)
        lines.append(f"frame {det.frame_id} box {box} score {repr(float(det.score))} "
                     f"matched {int(ok)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_pr_curve(path, detections: list[Detection], ground_truth: dict[int, BBox],
                   iou_thr: float = 0.5) -> None:
    recall, precision = precision_recall(detections, ground_truth, iou_thr)
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recall", "precision"])
        for r, p in zip(recall, precision):
            writer.writerow([repr(float(r)), repr(float(p))])
