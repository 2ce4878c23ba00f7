import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ranklsd.geometry import (
    LineSegment,
    Point,
    canonical_array,
    centroid,
    format_segments,
    parse_segments,
    rotate90,
    rotate_map90,
    segment_distance,
)

coord = st.floats(0.0, 1.0, allow_nan=False)
segment = st.builds(lambda a, b, c, d: LineSegment((a, b), (c, d)), coord, coord, coord, coord)


def test_centroid_examples():
    assert centroid(LineSegment((0, 0), (1, 1))) == Point(0.5, 0.5)
    assert centroid(LineSegment((0.2, 0.2), (0.2, 0.2))) == Point(0.2, 0.2)
    c = centroid(LineSegment((0.1, 0.3), (0.5, 0.1)))
    assert c.x == pytest.approx(0.3) and c.y == pytest.approx(0.2)


def test_segment_distance_examples():
    a = LineSegment((0, 0), (1, 0))
    assert segment_distance(a, a, 64) == 0.0
    assert segment_distance(a, LineSegment((1, 0), (0, 0)), 64) == 0.0
    s = 128.0
    b = LineSegment((0, 3 / s), (1, 4 / s))
    assert segment_distance(a, b, s) == pytest.approx(5.0, abs=1e-12)


def test_segment_distance_rejects_bad_scale():
    with pytest.raises(ValueError):
        segment_distance(LineSegment((0, 0), (1, 0)), LineSegment((0, 0), (1, 0)), 0)


def test_rotation_examples():
    assert rotate90((1.0, 0.0), 1) == (0.0, 0.0)
    assert rotate90((0.5, 0.5), 1) == (0.5, 0.5)
    assert rotate90((0.5, 0.5), -1) == (0.5, 0.5)
    with pytest.raises(ValueError):
        rotate90((0.1, 0.1), 2)


def test_clamping_and_finiteness():
    s = LineSegment((-0.5, 0.2), (1.5, 2.0))
    assert s.e1 == (0.0, 0.2) and s.e2 == (1.0, 1.0)
    with pytest.raises(ValueError):
        LineSegment((float("nan"), 0), (0, 0))


def test_rotate_map_round_trip_and_shape():
    m = np.random.default_rng(0).random((3, 5))
    r = rotate_map90(m, 1)
    assert r.shape == (5, 3)
    assert np.array_equal(rotate_map90(r, -1), m)


def test_rotate_map_agrees_with_point_rotation():
    # a marked pixel follows its center under the same rotation
    H = 8
    m = np.zeros((H, H))
    m[2, 5] = 1.0  # row 2, column 5 -> pixel center (5.5, 2.5) / H in normalized coords
    r = rotate_map90(m, 1)
    x, y = rotate90(((5 + 0.5) / H, (2 + 0.5) / H), 1)
    assert r[int(y * H), int(x * H)] == 1.0


def test_text_format_round_trip():
    segs = [LineSegment((0.1, 0.2), (0.3, 0.4)), LineSegment((0.5, 0.5), (0.9, 0.1))]
    text = format_segments(segs, [0.9, 0.25], header="scene 3")
    assert text.startswith("# scene 3\n")
    back, scores = parse_segments(text)
    assert back == segs and scores == [0.9, 0.25]
    back, scores = parse_segments(format_segments(segs))
    assert scores is None and back == segs


def test_text_format_errors():
    with pytest.raises(ValueError):
        parse_segments("0.1 0.2 0.3\n")
    with pytest.raises(ValueError):
        parse_segments("0.1 0.2 0.3 0.4 0.5\n0.1 0.2 0.3 0.4\n")


@settings(max_examples=100, deadline=None)
@given(segment)
def test_canonicalize_idempotent(s):
    c = s.canonicalize()
    assert c.canonicalize() == c
    assert (c.e1[1], c.e1[0]) <= (c.e2[1], c.e2[0])
    np.testing.assert_array_equal(canonical_array(s.as_array()[None])[0], c.as_array())


@settings(max_examples=100, deadline=None)
@given(segment, segment)
def test_distance_symmetric_and_order_invariant(a, b):
    d = segment_distance(a, b, 128)
    assert d >= 0
    assert d == pytest.approx(segment_distance(b, a, 128), abs=1e-12)
    flipped = LineSegment(b.e2, b.e1)
    assert d == pytest.approx(segment_distance(a, flipped, 128), abs=1e-12)


dyadic = st.integers(0, 1 << 20).map(lambda k: k / float(1 << 20))


@settings(max_examples=100, deadline=None)
@given(dyadic, dyadic, dyadic, dyadic)
def test_rotation_round_trip_exact_on_pixel_grid(a, b, c, d):
    s = LineSegment((a, b), (c, d))
    for k in (1, -1):
        assert rotate90(rotate90(s, k), -k) == s


@settings(max_examples=100, deadline=None)
@given(segment)
def test_rotation_round_trip_within_one_ulp(s):
    # 1 - (1 - x) drops the low bits of small x, so only the grid case is exact
    for k in (1, -1):
        back = rotate90(rotate90(s, k), -k)
        np.testing.assert_allclose(back.as_array(), s.as_array(), rtol=0, atol=2.3e-16)
