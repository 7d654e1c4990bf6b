# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Hot loops for decoding and evaluation.

Arithmetic mirrors ``vidloc._kernels_py`` operation for operation so both
backends agree bit-for-bit (build without -ffast-math).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


cdef inline double _iou(double s1, double e1, double s2, double e2) noexcept nogil:
    cdef double inter = (e1 if e1 < e2 else e2) - (s1 if s1 > s2 else s2)
    if inter < 0.0:
        inter = 0.0
    cdef double union = (e1 - s1) + (e2 - s2) - inter
    if union > 0.0:
        return inter / union
    if s1 == s2 and e1 == e2:
        return 1.0
    return 0.0


def soft_nms(double[::1] starts, double[::1] ends, double[::1] scores,
             double sigma, double min_score):
    """Gaussian SoftNMS over one class. Returns (kept indices, decayed scores)."""
    cdef Py_ssize_t n = starts.shape[0]
    cdef double[::1] cur = np.array(scores, dtype=np.float64, copy=True)
    cdef cnp.uint8_t[::1] alive = np.zeros(n, dtype=np.uint8)
    cdef cnp.int64_t[::1] keep = np.empty(n, dtype=np.int64)
    cdef double[::1] kept_scores = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i, j, best, n_alive = 0, n_keep = 0
    cdef double iou
    with nogil:
        for i in range(n):
            if cur[i] >= min_score:
                alive[i] = 1
                n_alive += 1
        while n_alive > 0:
            best = -1
            for i in range(n):
                if not alive[i]:
                    continue
                if best < 0 or cur[i] > cur[best] or (
                        cur[i] == cur[best] and starts[i] < starts[best]):
                    best = i
            alive[best] = 0
            n_alive -= 1
            keep[n_keep] = best
            kept_scores[n_keep] = cur[best]
            n_keep += 1
            for j in range(n):
                if not alive[j]:
                    continue
                iou = _iou(starts[best], ends[best], starts[j], ends[j])
                cur[j] = cur[j] * exp(-(iou * iou) / sigma)
                if cur[j] < min_score:
                    alive[j] = 0
                    n_alive -= 1
    return np.asarray(keep)[:n_keep].copy(), np.asarray(kept_scores)[:n_keep].copy()


def iou_matrix(double[::1] s1, double[::1] e1, double[::1] s2, double[::1] e2):
    cdef Py_ssize_t n = s1.shape[0], m = s2.shape[0], i, j
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(m):
                out[i, j] = _iou(s1[i], e1[i], s2[j], e2[j])
    return out_arr


def match_detections(cnp.int64_t[::1] pred_video, double[::1] pred_start, double[::1] pred_end,
                     cnp.int64_t[::1] gt_video, double[::1] gt_start, double[::1] gt_end,
                     double threshold):
    """Greedy one-to-one matching of score-sorted predictions to ground truth.

    Each prediction takes the unmatched ground truth of the same video with the
    highest IoU >= threshold (lowest index on ties). Returns per-prediction
    matched ground-truth index, -1 for false positives.
    """
    cdef Py_ssize_t n = pred_video.shape[0], m = gt_video.shape[0], i, j, best
    cdef cnp.uint8_t[::1] used = np.zeros(m, dtype=np.uint8)
    match_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] match = match_arr
    cdef double iou, best_iou
    with nogil:
        for i in range(n):
            best = -1
            best_iou = -1.0
            for j in range(m):
                if used[j] or gt_video[j] != pred_video[i]:
                    continue
                iou = _iou(pred_start[i], pred_end[i], gt_start[j], gt_end[j])
                if iou >= threshold and iou > best_iou:
                    best = j
                    best_iou = iou
            if best >= 0:
                used[best] = 1
                match[i] = best
    return match_arr
