import math

import pytest
from hypothesis import given, strategies as st

from vidloc.core import (ConfigError, InputError, ModelConfig, Segment, default_ranges,
                         make_frame_grid, prediction_count, temporal_iou)


@pytest.mark.parametrize("a,b,expected", [
    ((0, 2), (0, 2), 1.0),
    ((0, 2), (1, 3), 1 / 3),
    ((0, 1), (2, 3), 0.0),
    ((0, 1), (1, 2), 0.0),
    ((1, 1), (1, 1), 1.0),
    ((1, 1), (2, 2), 0.0),
    ((1, 1), (0, 2), 0.0),
])
def test_temporal_iou_examples(a, b, expected):
    assert temporal_iou(Segment(*a), Segment(*b)) == pytest.approx(expected)


def test_invalid_segment_rejected():
    with pytest.raises(InputError):
        Segment(3, 2)
    with pytest.raises(InputError):
        Segment(0, 1, score=1.5)


intervals = st.tuples(st.floats(0, 100), st.floats(0, 50)).map(lambda t: Segment(t[0], t[0] + t[1]))


@given(intervals, intervals)
def test_iou_symmetric_and_bounded(a, b):
    v = temporal_iou(a, b)
    assert v == temporal_iou(b, a)
    assert 0.0 <= v <= 1.0


@given(intervals, intervals)
def test_iou_one_iff_identical(a, b):
    if a.length > 0 and temporal_iou(a, b) == 1.0:
        assert (a.start, a.end) == pytest.approx((b.start, b.end))
    if a.length > 0:
        assert temporal_iou(a, a) == 1.0


@pytest.mark.parametrize("n,l,counts,total", [
    (128, 3, (128, 64, 32), 224),
    (128, 4, (128, 64, 32, 16), 240),
    (8, 1, (8,), 8),
])
def test_frame_grid_counts(n, l, counts, total):
    g = make_frame_grid(n, l)
    assert g.counts == counts
    assert g.total == total == prediction_count(n, l)


def test_single_level_timestamps():
    g = make_frame_grid(8, 1)
    assert g.timestamps[0] == tuple(float(i) for i in range(8))


@given(st.integers(1, 300), st.integers(1, 6))
def test_grid_halving_and_subsampling(n, l):
    if n < 2 ** (l - 1):
        with pytest.raises(ConfigError):
            make_frame_grid(n, l)
        return
    g = make_frame_grid(n, l)
    for i in range(1, l):
        assert g.counts[i] == g.counts[i - 1] // 2
        stride = 2 ** i
        assert g.timestamps[i] == g.timestamps[0][::stride][: g.counts[i]]
    assert g.total == sum(n // 2 ** i for i in range(l))


def test_model_config_ranges_and_validation():
    cfg = ModelConfig()
    assert cfg.regression_ranges == ((0, 4), (4, 8), (8, 16), (16, math.inf))
    assert default_ranges(1) == ((0.0, math.inf),)
    with pytest.raises(ConfigError):
        ModelConfig(L=2, regression_ranges=((0, 4), (4, 8)))
    with pytest.raises(ConfigError):
        ModelConfig(loss_kind="giou")
    with pytest.raises(ConfigError):
        ModelConfig(N=4, L=4)
    assert ModelConfig(pyramid_style="none").L == 1


def test_model_config_roundtrip():
    cfg = ModelConfig(text_mode="all-tokens", L=3)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
