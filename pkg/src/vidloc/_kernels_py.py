"""Pure-Python twins of the compiled kernels in ``vidloc._ext._kernels``."""
import math

import numpy as np


def _iou(s1, e1, s2, e2):
    inter = (e1 if e1 < e2 else e2) - (s1 if s1 > s2 else s2)
    if inter < 0.0:
        inter = 0.0
    union = (e1 - s1) + (e2 - s2) - inter
    if union > 0.0:
        return inter / union
    if s1 == s2 and e1 == e2:
        return 1.0
    return 0.0


def soft_nms(starts, ends, scores, sigma, min_score):
    starts = [float(v) for v in starts]
    ends = [float(v) for v in ends]
    cur = [float(v) for v in scores]
    n = len(cur)
    alive = [cur[i] >= min_score for i in range(n)]
    keep, kept_scores = [], []
    n_alive = sum(alive)
    while n_alive > 0:
        best = -1
        for i in range(n):
            if not alive[i]:
                continue
            if best < 0 or cur[i] > cur[best] or (
                    cur[i] == cur[best] and starts[i] < starts[best]):
                best = i
        alive[best] = False
        n_alive -= 1
        keep.append(best)
        kept_scores.append(cur[best])
        sb, eb = starts[best], ends[best]
        for j in range(n):
            if not alive[j]:
                continue
            iou = _iou(sb, eb, starts[j], ends[j])
            cur[j] = cur[j] * math.exp(-(iou * iou) / sigma)
            if cur[j] < min_score:
                alive[j] = False
                n_alive -= 1
    return np.asarray(keep, dtype=np.int64), np.asarray(kept_scores, dtype=np.float64)


def iou_matrix(s1, e1, s2, e2):
    out = np.empty((len(s1), len(s2)), dtype=np.float64)
    for i in range(len(s1)):
        for j in range(len(s2)):
            out[i, j] = _iou(float(s1[i]), float(e1[i]), float(s2[j]), float(e2[j]))
    return out


def match_detections(pred_video, pred_start, pred_end, gt_video, gt_start, gt_end, threshold):
    m = len(gt_video)
    used = [False] * m
    match = np.full(len(pred_video), -1, dtype=np.int64)
    by_video = {}
    for j in range(m):
        by_video.setdefault(int(gt_video[j]), []).append(j)
    for i in range(len(pred_video)):
        best, best_iou = -1, -1.0
        ps, pe = float(pred_start[i]), float(pred_end[i])
        for j in by_video.get(int(pred_video[i]), ()):
            if used[j]:
                continue
            iou = _iou(ps, pe, float(gt_start[j]), float(gt_end[j]))
            if iou >= threshold and iou > best_iou:
                best, best_iou = j, iou
        if best >= 0:
            used[best] = True
            match[i] = best
    return match
