import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vidloc.core import Segment, default_ranges, make_frame_grid
from vidloc.decode import expand
from vidloc.targets import assign_targets

RANGES = default_ranges(4)


def _cell(tg, level, t, stride):
    i = int(t // stride)
    return tg.y[level][i], tuple(tg.dt[level][i])


def test_level1_example():
    tg = assign_targets([Segment(10, 14, 0)], make_frame_grid(32, 4), RANGES)
    assert _cell(tg, 0, 12, 1) == (1.0, (2.0, 2.0))


def test_level2_bucket_exclusion():
    tg = assign_targets([Segment(10, 14, 0)], make_frame_grid(32, 4), RANGES)
    assert _cell(tg, 1, 12, 2)[0] == 0.0
    assert not any(y.any() for y in tg.y[1:])


def test_background_cells():
    tg = assign_targets([Segment(10, 14, 0)], make_frame_grid(32, 4), RANGES)
    assert tg.y[0][:10].sum() == 0 and tg.y[0][15:].sum() == 0
    assert not tg.dt[0][:10].any()


def test_long_segment_goes_to_top_level():
    tg = assign_targets([Segment(0, 63, 0)], make_frame_grid(64, 4), RANGES)
    # max displacement >= 31.5 > 16 for every cell: top level only
    assert [int(y.sum()) for y in tg.y] == [0, 0, 0, 8]
    y, dt = _cell(tg, 3, 16, 8)
    assert y == 1.0 and dt == (2.0, 47 / 8)


def test_shortest_segment_wins():
    tg = assign_targets([Segment(0, 60, 0), Segment(4, 6, 0)], make_frame_grid(64, 4), RANGES,
                        use_ranges=False)
    assert _cell(tg, 0, 5, 1) == (1.0, (1.0, 1.0))
    assert _cell(tg, 0, 20, 1) == (1.0, (20.0, 40.0))


def test_padded_frames_never_positive():
    mask = np.zeros(32, dtype=bool)
    mask[:20] = True
    tg = assign_targets([Segment(15, 25, 0)], make_frame_grid(32, 1), None, mask, use_ranges=False)
    assert tg.y[0][15:20].all() and not tg.y[0][20:].any()
    assert not tg.valid[0][20:].any()


def test_no_segments():
    tg = assign_targets([], make_frame_grid(16, 2), RANGES)
    assert all(not y.any() for y in tg.y)
    y, dt, v = tg.flat()
    assert y.shape == (24,) and dt.shape == (24, 2) and v.all()


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 127), st.floats(0, 127))
def test_roundtrip_and_no_orphans(a, b):
    s, e = min(a, b), max(a, b)
    grid = make_frame_grid(128, 4)
    tg = assign_targets([Segment(s, e, 0)], grid, RANGES)
    n_pos = 0
    for lvl, stride in enumerate(grid.level_strides):
        for i in np.flatnonzero(tg.y[lvl]):
            logits = [np.full((1, c), -50.0) for c in grid.counts]
            dts = [np.zeros((1, c, 2)) for c in grid.counts]
            logits[lvl][0, i] = 50.0
            dts[lvl][0, i] = tg.dt[lvl][i]
            c = expand(logits, dts, grid.level_strides, 128, score_threshold=0.5)
            assert len(c) == 1
            assert c.starts[0] == pytest.approx(s, abs=1e-4) and c.ends[0] == pytest.approx(e, abs=1e-4)
            n_pos += 1
    contained = any(s <= t <= e for stamps in grid.timestamps[:1] for t in stamps)
    if contained:
        assert n_pos >= 1
