"""Evaluation metrics: Recall@K at IoU, mAP at IoU, frame accuracy, per-class frame AP."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import InputError, interval_iou


@dataclass
class EvalReport:
    task: str
    metrics: dict = field(default_factory=dict)
    per_class_ap: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.metrics.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"metric {k}={v} outside [0, 1]")

    def to_json(self):
        return json.dumps({"task": self.task,
                           "metrics": {k: round(float(v), 10) for k, v in sorted(self.metrics.items())},
                           "per_class_ap": {str(k): round(float(v), 10)
                                            for k, v in sorted(self.per_class_ap.items())}},
                          indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["task"], d["metrics"], {int(k): v for k, v in d["per_class_ap"].items()})

    def table(self):
        rows = [f"{'metric':<20} {'value':>8}", "-" * 29]
        rows += [f"{k:<20} {v:8.4f}" for k, v in sorted(self.metrics.items())]
        if self.per_class_ap:
            rows += ["", f"{'class':<20} {'AP':>8}", "-" * 29]
            rows += [f"{k!s:<20} {v:8.4f}" for k, v in sorted(self.per_class_ap.items())]
        return "\n".join(rows)


def average_precision(tp, n_gt):
    """All-point interpolated AP from hit flags ordered by descending score."""
    if n_gt == 0:
        return 0.0
    tp = np.asarray(tp, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, tp.size + 1)
    recall = ctp / n_gt
    # precision envelope, then sum over recall steps
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * envelope))


def recall_at_k(preds, gts, k=1, iou_thresholds=(0.5, 0.7)):
    """Fraction of queries with some top-k prediction whose IoU exceeds each threshold.

    ``preds[q]`` is a ranked list of Segments; ``gts[q]`` is a Segment or a
    list of Segments (a hit on any counts).
    """
    if len(gts) == 0:
        raise InputError("recall needs at least one query")
    if len(preds) != len(gts):
        raise InputError("one prediction list per query required")
    hits = np.zeros(len(iou_thresholds))
    for ranked, gt in zip(preds, gts):
        gt_list = gt if isinstance(gt, (list, tuple)) else [gt]
        best = 0.0
        for p in list(ranked)[:k]:
            for g in gt_list:
                best = max(best, interval_iou(p.start, p.end, g.start, g.end))
        hits += np.array([best > t for t in iou_thresholds], dtype=np.float64)
    return {t: float(h / len(gts)) for t, h in zip(iou_thresholds, hits)}


def map_at_iou(preds, gts, threshold=0.5, classes=None):
    """Mean AP over classes with ground truth.

    ``preds`` and ``gts`` are lists of (video_id, Segment); predictions need
    scores. Per class, predictions are ranked by score (ties: earlier start,
    then input order) and greedily matched one-to-one to same-video ground
    truth at IoU >= threshold. Returns (mAP, {class: AP}).
    """
    videos = {}
    for v, _ in list(gts) + list(preds):
        videos.setdefault(v, len(videos))
    gt_classes = sorted({s.class_id for _, s in gts}) if classes is None else sorted(classes)
    per_class = {}
    for c in gt_classes:
        g = [(videos[v], s) for v, s in gts if s.class_id == c]
        p = [(videos[v], s) for v, s in preds if s.class_id == c]
        if not g:
            continue
        if not p:
            per_class[c] = 0.0
            continue
        scores = np.array([s.score for _, s in p], dtype=np.float64)
        starts = np.array([s.start for _, s in p], dtype=np.float64)
        order = np.lexsort((np.arange(len(p)), starts, -scores))
        pv = np.array([p[i][0] for i in order], dtype=np.int64)
        match = kernels.match_detections(
            pv, starts[order], np.array([p[i][1].end for i in order]),
            np.array([v for v, _ in g], dtype=np.int64),
            np.array([s.start for _, s in g]), np.array([s.end for _, s in g]), threshold)
        per_class[c] = average_precision(match >= 0, len(g))
    if not per_class:
        return 0.0, {}
    return float(np.mean(list(per_class.values()))), per_class


def frame_accuracy(pred_labels, gt_labels):
    pred_labels, gt_labels = np.asarray(pred_labels), np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape:
        raise InputError("prediction and ground-truth lengths differ")
    if gt_labels.size == 0:
        raise InputError("no frames")
    return float(np.mean(pred_labels == gt_labels))


def segmentation_map(per_frame_scores, gt_labels):
    """Mean over non-background classes present in ``gt_labels`` of frame-ranking AP.

    ``per_frame_scores`` is (frames, classes) with no background column; gt
    labels are -1 for unlabeled frames. Returns (mAP, {class: AP}).
    """
    scores = np.asarray(per_frame_scores, dtype=np.float64)
    gt = np.asarray(gt_labels)
    if scores.shape[0] != gt.shape[0]:
        raise InputError("score rows and labels differ in length")
    per_class = {}
    for c in range(scores.shape[1]):
        pos = gt == c
        if not pos.any():
            continue
        order = np.lexsort((np.arange(len(gt)), -scores[:, c]))
        per_class[c] = average_precision(pos[order], int(pos.sum()))
    if not per_class:
        return 0.0, {}
    return float(np.mean(list(per_class.values()))), per_class
