import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import MultiPoint

from sewfield.metrics import (
    evaluate,
    match_edges,
    match_panels,
    panel_iou,
    placement_errors,
    polygon_iou,
    prf,
    quat_distance,
    score_pattern,
    stitch_prf,
)
from sewfield.pattern import Panel, Placement, SewingPattern, Stitch, quat_from_axis_angle

from conftest import square_panel


def _shift(panel, dx):
    return Panel.from_vertices(panel.polyline + [dx, 0], panel.scale)


def test_identical_and_disjoint_squares():
    sq = square_panel(0.5)
    assert panel_iou(sq, sq) == 1.0
    far = Panel.from_vertices([[2, 2], [3, 2], [3, 3], [2, 3]])
    assert panel_iou(sq, far) == 0.0


def test_offset_squares_one_third():
    a = np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]])
    assert polygon_iou(a, a + [0.5, 0]) == pytest.approx(1 / 3, abs=0.005)


def test_zero_area_rejected():
    line = np.array([[0, 0], [1, 0], [2, 0.0]])
    with pytest.raises(ValueError, match="zero-area"):
        polygon_iou(line, line)


def _convex(rng):
    pts = rng.uniform(-1, 1, (8, 2)) * rng.uniform(0.3, 1.0, 2) + rng.uniform(-0.3, 0.3, 2)
    return np.asarray(MultiPoint([tuple(p) for p in pts]).convex_hull.exterior.coords)[:-1]


def test_raster_iou_against_polygon_clipping():
    from shapely.geometry import Polygon

    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        a, b = _convex(rng), _convex(rng)
        pa, pb = Polygon(a), Polygon(b)
        exact = pa.intersection(pb).area / pa.union(pb).area
        worst = max(worst, abs(polygon_iou(a, b) - exact))
    assert worst < 0.005


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_iou_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = _convex(rng), _convex(rng)
    ab, ba = polygon_iou(a, b), polygon_iou(b, a)
    assert ab == ba
    assert 0.0 <= ab <= 1.0


def test_placement_errors_examples():
    sq = square_panel(0.5, 10)
    q = quat_from_axis_angle((0, 0, 1), 0.3)
    t = SewingPattern((sq,), (Placement((1, 2, 3), q),), ())
    p = SewingPattern((sq,), (Placement((4, 6, 3), tuple(-np.array(q))),), ())
    assert placement_errors(p, t, [(0, 0)]) == pytest.approx((5.0, 0.0))
    assert placement_errors(t, t, [(0, 0)]) == (0.0, 0.0)
    assert quat_distance(q, -np.array(q)) == 0.0


def _pattern(small_corpus, k=0):
    return small_corpus[k]


def test_identical_patterns_score_perfectly(small_corpus):
    p = _pattern(small_corpus)
    pairs, ious = match_panels(p, p)
    assert pairs == [(i, i) for i in range(p.n_panels)]
    assert np.allclose(np.diag(ious), 1.0)
    rep = evaluate([p], [p])
    assert rep.panel_iou == 1.0 and rep.panel_accuracy == 1.0 and rep.edge_accuracy == 1.0
    assert (rep.precision, rep.recall, rep.f1) == (1.0, 1.0, 1.0)
    assert rep.trans_l2 == 0.0 and rep.rot_l2 == 0.0


def test_extra_panel_is_unmatched(small_corpus):
    t = _pattern(small_corpus)
    extra = square_panel(0.2, 10)
    p = SewingPattern(t.panels + (extra,), t.placements + (Placement(),), t.stitches)
    pairs, _ = match_panels(p, t)
    assert len(pairs) == t.n_panels
    unmatched = set(range(p.n_panels)) - {i for i, _ in pairs}
    assert unmatched == {t.n_panels}
    rep = evaluate([p], [t])
    assert rep.panel_accuracy == 0.0
    assert rep.panel_iou_penalized == pytest.approx(rep.panel_iou * t.n_panels / p.n_panels)


def test_shuffled_panels_give_same_scores(small_corpus):
    t = _pattern(small_corpus, 2)
    perm = np.random.default_rng(0).permutation(t.n_panels)
    inv = {int(old): new for new, old in enumerate(perm)}
    p = SewingPattern(tuple(t.panels[i] for i in perm), tuple(t.placements[i] for i in perm),
                      tuple(Stitch((inv[s.a[0]], s.a[1]), (inv[s.b[0]], s.b[1])) for s in t.stitches))
    pairs, _ = match_panels(p, t)
    assert sorted(pairs) == sorted((inv[j], j) for j in range(t.n_panels))
    a, b = evaluate([p], [t]), evaluate([t], [t])
    assert a.panel_iou == b.panel_iou and a.f1 == b.f1 == 1.0


def test_edge_oversegmentation_counts_wrong(small_corpus):
    t = _pattern(small_corpus)
    panel = t.panels[0]
    e0, e1 = panel.edges[0].split(0.5)
    split = Panel((e0, e1) + panel.edges[1:], panel.scale)
    p = t.replace(panels=(split,) + t.panels[1:], stitches=())
    rep = evaluate([p], [t])
    assert rep.edge_accuracy == pytest.approx((t.n_panels - 1) / t.n_panels)


def test_stitch_prf_conventions(small_corpus):
    t = _pattern(small_corpus)
    pairs = [(i, i) for i in range(t.n_panels)]
    assert stitch_prf(t.replace(stitches=()), t, pairs)[:2] == (0.0, 0.0)
    half = t.replace(stitches=t.stitches[: len(t.stitches) // 2])
    if len(t.stitches) % 2 == 0:
        P, R, F = stitch_prf(half, t, pairs)
        assert (P, R) == (1.0, 0.5) and F == pytest.approx(2 / 3)
    assert prf(0, 0, 0) == (1.0, 1.0, 1.0)
    assert prf(0, 0, 3) == (0.0, 0.0, 0.0)
    P, R, F = prf(3, 4, 6)
    assert F == pytest.approx(2 * P * R / (P + R))


def test_match_edges_rotated_indexing():
    sq = square_panel(0.5, 10)
    rot = Panel(sq.edges[1:] + sq.edges[:1], sq.scale)
    assert match_edges(rot, sq) == {0: 1, 1: 2, 2: 3, 3: 0}


def test_report_serialization(small_corpus):
    rep = evaluate(small_corpus[:3], small_corpus[:3], names=["a", "b", "c"])
    doc = json.loads(rep.to_json())
    assert doc["n_patterns"] == 3 and [s["name"] for s in doc["per_pattern"]] == ["a", "b", "c"]
    table = rep.table()
    assert "Panel IoU" in table and "F1" in table
    with pytest.raises(ValueError):
        evaluate(small_corpus[:2], small_corpus[:1])


def test_score_fields_bounded(small_corpus):
    s = score_pattern(small_corpus[0], small_corpus[1])
    assert all(0 <= v <= 1 for v in s.ious)
