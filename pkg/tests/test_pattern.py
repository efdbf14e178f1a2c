import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sewfield.pattern import (
    Edge,
    Panel,
    PatternError,
    Placement,
    SewingPattern,
    Stitch,
    canonical_quat,
    check_panel,
    check_pattern,
    denormalize_panel,
    normalize_panel,
    quat_from_axis_angle,
    quat_to_matrix,
    resample_closed,
)

from conftest import square_panel


def test_edge_line_and_curve_points():
    e = Edge((0, 0), (2, 0))
    assert np.allclose(e.point_at(0.5), [1, 0])
    c = Edge((0, 0), (2, 0), (1, 1))
    assert np.allclose(c.point_at(0.5), [1, 0.5])
    assert c.is_curved and not e.is_curved


def test_curve_length_against_dense_polyline():
    c = Edge((0, 0), (2, 0), (1, 1.5))
    pts = c.point_at(np.linspace(0, 1, 200001))
    dense = np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()
    assert c.length() == pytest.approx(dense, rel=1e-9)


def test_flatten_respects_chord_tolerance():
    c = Edge((0, 0), (1, 0), (0.5, 0.8))
    poly = c.flatten(1e-3)
    t = np.linspace(0, 1, 5001)
    curve = c.point_at(t)
    # every curve point lies within tol of the polyline
    from sewfield.oracles import segment_distance

    d = segment_distance(curve, poly[:-1], poly[1:])
    assert d.max() <= 1e-3 + 1e-12


@given(st.floats(0.05, 0.95), st.floats(-1, 1), st.floats(-1, 1))
def test_split_preserves_geometry_and_length(t, cx, cy):
    e = Edge((0, 0), (1, 0.2), (cx, cy))
    a, b = e.split(t)
    assert a.end == b.start
    assert a.length() + b.length() == pytest.approx(e.length(), rel=1e-9)
    assert np.allclose(a.point_at(1.0), e.point_at(t))


@given(st.floats(0.0, 1.0))
def test_param_at_fraction_is_arc_length_fraction(f):
    e = Edge((0, 0), (1, 0), (0.2, 0.9))
    t = e.param_at_fraction(f)
    a, _ = e.split(t) if 0 < t < 1 else (None, None)
    if a is not None:
        assert a.length() == pytest.approx(f * e.length(), abs=2e-3)


def test_panel_basic_measures():
    p = square_panel(0.5, scale=10.0)
    assert p.n_edges == 4
    assert p.signed_area() == pytest.approx(1.0)
    assert p.perimeter() == pytest.approx(40.0)
    assert p.perimeter(cm=False) == pytest.approx(4.0)
    check_panel(p)


def test_check_panel_rejects_clockwise_and_out_of_box():
    cw = Panel.from_vertices([[0, 0], [0, 0.5], [0.5, 0.5], [0.5, 0]])
    with pytest.raises(PatternError, match="counter-clockwise"):
        check_panel(cw)
    big = Panel.from_vertices([[-1.2, -0.5], [0.5, -0.5], [0.5, 0.5]])
    with pytest.raises(PatternError, match=r"\[-1, 1\]"):
        check_panel(big)


def test_check_panel_rejects_self_intersection_and_close_endpoints():
    bow = Panel.from_vertices([[0, 0], [0.5, 0.5], [0.5, 0], [0, 0.5]])
    with pytest.raises(PatternError):
        check_panel(bow)
    close = Panel.from_vertices([[0, 0], [0.5, 0], [0.52, 0.0001], [0.5, 0.5]])
    with pytest.raises(PatternError, match="endpoints closer"):
        check_panel(close)
    check_panel(close, separation=False)


def test_check_panel_rejects_open_loop():
    edges = (Edge((0, 0), (0.5, 0)), Edge((0.5, 0), (0.5, 0.5)), Edge((0.5, 0.5), (0.0, 0.1)))
    with pytest.raises(PatternError, match="not closed"):
        check_panel(Panel(edges))


def test_normalize_square_60cm():
    verts = np.array([[0, 0], [60, 0], [60, 60], [0, 60.0]])
    panel, center = normalize_panel(verts)
    assert panel.scale == pytest.approx(60 / 1.8)
    assert np.abs(panel.polyline).max() == pytest.approx(0.9)
    assert center == pytest.approx((30.0, 30.0))


def test_normalize_reverses_clockwise_input_and_keeps_curves():
    verts = np.array([[0, 0], [0, 40], [30, 40], [30, 0.0]])
    ctrls = [None, (15, 50), None, None]
    panel, center = normalize_panel(verts, ctrls)
    assert panel.signed_area() > 0
    curved = [e for e in panel.edges if e.is_curved]
    assert len(curved) == 1
    v, c = denormalize_panel(panel, center)
    bent = [x for x in c if x is not None][0]
    assert np.allclose(bent, [15, 50], atol=1e-9)


def test_normalize_round_trip(small_corpus):
    for pattern in small_corpus[:5]:
        for p in pattern.panels:
            v, c = denormalize_panel(p, (3.0, -2.0))
            q, center = normalize_panel(v, c)
            v2, c2 = denormalize_panel(q, center)
            assert np.abs(v2 - v).max() < 1e-9


def test_normalize_rejects_degenerate():
    with pytest.raises(PatternError):
        normalize_panel([[0, 0], [1, 1], [2, 2]])


def test_stitch_is_unordered():
    assert Stitch((1, 2), (0, 3)) == Stitch((0, 3), (1, 2))
    with pytest.raises(PatternError):
        Stitch((0, 1), (0, 1))


def test_quaternions():
    q = quat_from_axis_angle((0, 1, 0), np.pi / 2)
    R = quat_to_matrix(q)
    assert np.allclose(R @ [1, 0, 0], [0, 0, -1], atol=1e-12)
    assert canonical_quat((-1, 0, 0, 0)) == (1.0, 0.0, 0.0, 0.0)
    assert canonical_quat((0, -1, 0, 0)) == (0.0, 1.0, 0.0, 0.0)


def test_placement_apply_maps_to_cm():
    pl = Placement((1, 2, 3), quat_from_axis_angle((0, 0, 1), np.pi / 2))
    p = pl.apply(np.array([[1.0, 0.0]]), 10.0)
    assert np.allclose(p, [[1, 12, 3]], atol=1e-12)


def test_pattern_checks(small_corpus):
    p = small_corpus[0]
    check_pattern(p)
    bad = p.replace(stitches=p.stitches + (Stitch((0, 0), (0, 99)),))
    with pytest.raises(PatternError, match="missing edge"):
        check_pattern(bad)
    with pytest.raises(PatternError):
        check_pattern(SewingPattern((), (), ()))


def test_flattened_mode_limits_multiplicity():
    sq = square_panel()
    pat = SewingPattern((sq, sq, sq), (Placement(),) * 3, (Stitch((0, 0), (1, 0)), Stitch((0, 0), (2, 0))))
    check_pattern(pat)
    with pytest.raises(PatternError, match="multiplicity"):
        check_pattern(pat, flattened=True)


def test_resample_closed_is_evenly_spaced():
    pts = resample_closed(square_panel().polyline, 40)
    gaps = np.linalg.norm(np.diff(np.vstack([pts, pts[:1]]), axis=0), axis=1)
    assert np.allclose(gaps, 0.1)
