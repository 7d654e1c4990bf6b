"""Kernel backend selection.

The compiled extension is used when importable; otherwise, or when
``VIDLOC_PURE_PYTHON=1`` is set, the pure-Python twins are used. Both backends
take float64 / int64 contiguous arrays and return identical results.
"""
import os

import numpy as np

from . import _kernels_py

_compiled = None
if os.environ.get("VIDLOC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._ext import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

BACKEND = "compiled" if _compiled is not None else "python"
_impl = BACKENDS[BACKEND]


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def soft_nms(starts, ends, scores, sigma, min_score, backend=None):
    impl = BACKENDS[backend] if backend else _impl
    return impl.soft_nms(_f64(starts), _f64(ends), _f64(scores), float(sigma), float(min_score))


def iou_matrix(s1, e1, s2, e2, backend=None):
    impl = BACKENDS[backend] if backend else _impl
    return impl.iou_matrix(_f64(s1), _f64(e1), _f64(s2), _f64(e2))


def match_detections(pred_video, pred_start, pred_end, gt_video, gt_start, gt_end,
                     threshold, backend=None):
    impl = BACKENDS[backend] if backend else _impl
    return impl.match_detections(_i64(pred_video), _f64(pred_start), _f64(pred_end),
                                 _i64(gt_video), _f64(gt_start), _f64(gt_end), float(threshold))
