"""Training targets for dense per-level relevancy and displacement prediction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FrameGrid


@dataclass
class TrainTargets:
    y: list      # per level (N_l,) float32 in {0, 1}
    dt: list     # per level (N_l, 2) float64, stride units, zero where y == 0
    valid: list  # per level (N_l,) bool

    def flat(self):
        return (np.concatenate(self.y), np.concatenate(self.dt), np.concatenate(self.valid))


def _in_bucket(m, lo, hi, bottom):
    ok = (m > lo) & (m <= hi)
    if bottom:
        ok |= (m >= lo) & (m <= hi)
    return ok


def assign_targets(gts, grid: FrameGrid, ranges=None, frame_mask=None, use_ranges=True) -> TrainTargets:
    """Targets for one (video, text) pair.

    A level-l cell at time t is positive when t lies inside a ground-truth
    segment [s, e] and max(t - s, e - t), in level-1 frame units, falls in
    that level's range bucket. Among several qualifying segments the shortest
    wins. Displacements are stored divided by the level stride.
    With ``use_ranges=False`` every cell inside a segment is positive
    (frame labelling).
    """
    if ranges is None:
        use_ranges = False
    starts = np.array([g.start for g in gts], dtype=np.float64)
    ends = np.array([g.end for g in gts], dtype=np.float64)
    lengths = ends - starts
    ys, dts, valids = [], [], []
    for lvl, (stride, stamps) in enumerate(zip(grid.level_strides, grid.timestamps)):
        t = np.asarray(stamps, dtype=np.float64)
        n = len(t)
        if frame_mask is None:
            valid = np.ones(n, dtype=bool)
        else:
            valid = np.asarray(frame_mask, dtype=bool)[t.astype(np.int64)]
        y = np.zeros(n, dtype=np.float32)
        dt = np.zeros((n, 2), dtype=np.float64)
        if len(gts):
            left = t[:, None] - starts[None]
            right = ends[None] - t[:, None]
            ok = (left >= 0) & (right >= 0)
            if use_ranges:
                lo, hi = ranges[lvl]
                ok &= _in_bucket(np.maximum(left, right), lo, hi, lvl == 0)
            ok &= valid[:, None]
            cost = np.where(ok, lengths[None], np.inf)
            best = np.argmin(cost, axis=1)
            pos = ok.any(1)
            y[pos] = 1.0
            rows = np.flatnonzero(pos)
            dt[rows, 0] = left[rows, best[rows]] / stride
            dt[rows, 1] = right[rows, best[rows]] / stride
        ys.append(y)
        dts.append(dt)
        valids.append(valid)
    return TrainTargets(ys, dts, valids)
