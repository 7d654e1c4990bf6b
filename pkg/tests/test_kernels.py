"""Both kernel backends agree with each other and with direct definitions."""
import numpy as np
import pytest

from vidloc import kernels
from vidloc.core import interval_iou


def test_backend_selected():
    assert kernels.BACKEND in kernels.BACKENDS
    assert "python" in kernels.BACKENDS


def test_iou_matrix_matches_scalar(backend):
    rng = np.random.default_rng(1)
    s1 = rng.uniform(0, 10, 7)
    e1 = s1 + rng.uniform(0, 5, 7)
    s2 = rng.uniform(0, 10, 5)
    e2 = s2 + rng.uniform(0, 5, 5)
    m = kernels.iou_matrix(s1, e1, s2, e2, backend=backend)
    for i in range(7):
        for j in range(5):
            assert m[i, j] == interval_iou(s1[i], e1[i], s2[j], e2[j])


def test_backends_agree_on_soft_nms():
    if len(kernels.BACKENDS) < 2:
        pytest.skip("compiled extension not built")
    rng = np.random.default_rng(2)
    for _ in range(200):
        n = int(rng.integers(0, 40))
        s = rng.uniform(0, 50, n)
        e = s + rng.uniform(0, 20, n)
        p = rng.uniform(0, 1, n)
        a = kernels.soft_nms(s, e, p, 0.5, 0.001, backend="python")
        b = kernels.soft_nms(s, e, p, 0.5, 0.001, backend="compiled")
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])


def test_match_detections(backend):
    # two gts in video 0, one in video 1
    match = kernels.match_detections(
        [0, 0, 1, 0], [0.0, 0.0, 5.0, 10.0], [10.0, 10.0, 6.0, 20.0],
        [0, 1, 0], [0.0, 5.0, 10.0], [10.0, 6.0, 20.0], 0.5, backend=backend)
    assert match.tolist() == [0, -1, 1, 2]


def test_backends_agree_on_matching():
    if len(kernels.BACKENDS) < 2:
        pytest.skip("compiled extension not built")
    rng = np.random.default_rng(3)
    for _ in range(100):
        n, m = rng.integers(0, 30, 2)
        pv, gv = rng.integers(0, 3, n), rng.integers(0, 3, m)
        ps = rng.uniform(0, 30, n)
        gs = rng.uniform(0, 30, m)
        args = (pv, ps, ps + rng.uniform(0, 10, n), gv, gs, gs + rng.uniform(0, 10, m), 0.3)
        assert np.array_equal(kernels.match_detections(*args, backend="python"),
                              kernels.match_detections(*args, backend="compiled"))
