"""Dense predictions -> scored segments -> SoftNMS."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import Segment


@dataclass
class CandidateSet:
    starts: np.ndarray
    ends: np.ndarray
    scores: np.ndarray
    class_ids: np.ndarray
    levels: np.ndarray = None
    cells: np.ndarray = None

    def __post_init__(self):
        n = len(self.starts)
        self.starts = np.asarray(self.starts, dtype=np.float64)
        self.ends = np.asarray(self.ends, dtype=np.float64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        self.levels = np.zeros(n, np.int64) if self.levels is None else np.asarray(self.levels, np.int64)
        self.cells = np.zeros(n, np.int64) if self.cells is None else np.asarray(self.cells, np.int64)

    def __len__(self):
        return len(self.starts)

    @classmethod
    def from_segments(cls, segments, levels=None, cells=None):
        return cls([s.start for s in segments], [s.end for s in segments],
                   [s.score if s.score is not None else 1.0 for s in segments],
                   [s.class_id for s in segments], levels, cells)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0, np.int64))

    @property
    def segments(self):
        return [Segment(float(s), float(e), int(c), float(min(max(p, 0.0), 1.0)))
                for s, e, c, p in zip(self.starts, self.ends, self.class_ids, self.scores)]

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return CandidateSet(self.starts[idx], self.ends[idx], self.scores[idx],
                            self.class_ids[idx], self.levels[idx], self.cells[idx])

    def ranked(self):
        """Indices by score desc, then earlier start, then lower class id."""
        return np.lexsort((np.arange(len(self)), self.class_ids, self.starts, -self.scores))

    @staticmethod
    def concat(sets):
        sets = [s for s in sets if len(s)]
        if not sets:
            return CandidateSet.empty()
        return CandidateSet(*(np.concatenate([getattr(s, f) for s in sets])
                              for f in ("starts", "ends", "scores", "class_ids", "levels", "cells")))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def expand(logits, displacements, strides, n_frames, score_threshold=0.0, class_ids=None):
    """Turn per-level dense outputs for one video into candidate segments.

    ``logits[l]`` is (C, N_l), ``displacements[l]`` is (C, N_l, 2) in stride
    units. Cell i of level l sits at t = i * stride; its segment is
    [t - ds * stride, t + de * stride] clipped to [0, n_frames - 1].
    """
    out = []
    for lvl, (lg, dt, stride) in enumerate(zip(logits, displacements, strides), start=1):
        lg = np.asarray(lg, dtype=np.float64)
        dt = np.asarray(dt, dtype=np.float64)
        if lg.ndim == 1:
            lg, dt = lg[None], dt[None]
        C, n = lg.shape
        t = np.arange(n, dtype=np.float64) * stride
        starts = np.clip(t[None] - dt[..., 0] * stride, 0.0, n_frames - 1)
        ends = np.clip(t[None] + dt[..., 1] * stride, 0.0, n_frames - 1)
        scores = _sigmoid(lg)
        cls = np.broadcast_to((np.arange(C) if class_ids is None else np.asarray(class_ids))[:, None], (C, n))
        keep = scores >= score_threshold
        out.append(CandidateSet(starts[keep], ends[keep], scores[keep], cls[keep],
                                np.full(int(keep.sum()), lvl), np.broadcast_to(np.arange(n), (C, n))[keep]))
    return CandidateSet.concat(out)


def soft_nms(cands: CandidateSet, sigma=0.5, min_score=0.001, backend=None) -> CandidateSet:
    """Gaussian SoftNMS applied independently within each class."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    parts = []
    for c in np.unique(cands.class_ids):
        idx = np.flatnonzero(cands.class_ids == c)
        keep, scores = kernels.soft_nms(cands.starts[idx], cands.ends[idx], cands.scores[idx],
                                        sigma, min_score, backend=backend)
        sub = cands.take(idx[keep])
        sub.scores = scores
        parts.append(sub)
    merged = CandidateSet.concat(parts)
    return merged.take(merged.ranked())


def top_k(cands: CandidateSet, k) -> CandidateSet:
    if k < 1:
        raise ValueError("k must be >= 1")
    return cands.take(cands.ranked()[:k])


def prediction_records(video_id, cands: CandidateSet, seconds_per_frame, key="class_id"):
    return [
        {"video_id": video_id, key: int(c), "start_sec": float(s) * seconds_per_frame,
         "end_sec": float(e) * seconds_per_frame, "score": float(p)}
        for s, e, c, p in zip(cands.starts, cands.ends, cands.class_ids, cands.scores)
    ]


def write_predictions(path, records):
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def read_predictions(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
