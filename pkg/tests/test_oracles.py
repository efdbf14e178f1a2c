import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from shapely.geometry import Point, Polygon

from sewfield.oracles import even_odd_inside, sample_boundary, sdf_oracle, udf_oracle

from conftest import square_panel


def test_square_sdf_examples():
    sq = square_panel(0.5)
    assert sdf_oracle(sq, (0.0, 0.0)) == pytest.approx(-0.5)
    assert sdf_oracle(sq, (1.0, 0.0)) == pytest.approx(0.5)
    assert sdf_oracle(sq, (0.5, 0.5)) == 0.0


def test_square_udf_examples():
    sq = square_panel(0.5)
    assert udf_oracle(sq, (0.5, -0.5)) == 0.0
    assert udf_oracle(sq, (0.0, 0.0)) == pytest.approx(np.sqrt(0.5))


def test_sdf_matches_shapely(corpus_panels):
    rng = np.random.default_rng(0)
    for panel in corpus_panels[:20]:
        x = rng.uniform(-1, 1, (300, 2))
        poly = Polygon(panel.polyline)
        ring = poly.exterior
        ref = np.array([(-1 if poly.contains(Point(p)) else 1) * ring.distance(Point(p)) for p in x])
        assert np.allclose(sdf_oracle(panel, x), ref, atol=1e-12)


def test_udf_matches_brute_force(corpus_panels):
    rng = np.random.default_rng(1)
    for panel in corpus_panels[:20]:
        x = rng.uniform(-1, 1, (200, 2))
        O = panel.endpoints
        ref = np.array([min(np.hypot(*(p - o)) for o in O) for p in x])
        assert np.allclose(udf_oracle(panel, x), ref, atol=1e-14)


def test_udf_zero_exactly_on_endpoints(corpus_panels):
    for panel in corpus_panels[:20]:
        assert np.all(udf_oracle(panel, panel.endpoints) <= 1e-12)


def test_sign_consistency_with_even_odd(corpus_panels):
    rng = np.random.default_rng(2)
    for panel in corpus_panels[:10]:
        x = rng.uniform(-1, 1, (10_000, 2))
        d = sdf_oracle(panel, x)
        inside = even_odd_inside(x, panel.polyline)
        assert np.array_equal(d < 0, inside & (d != 0))


def test_sdf_eikonal_away_from_medial_axis(corpus_panels):
    rng = np.random.default_rng(3)
    h = 1e-5
    for panel in corpus_panels[:10]:
        x = rng.uniform(-1, 1, (400, 2))
        d = sdf_oracle(panel, x)
        gx = (sdf_oracle(panel, x + [h, 0]) - sdf_oracle(panel, x - [h, 0])) / (2 * h)
        gy = (sdf_oracle(panel, x + [0, h]) - sdf_oracle(panel, x - [0, h])) / (2 * h)
        g = np.hypot(gx, gy)
        # medial points: second-closest boundary segment nearly as close as the closest one
        a, b = panel.segments
        from sewfield.oracles import segment_distance

        per_seg = np.stack([segment_distance(x, a[k:k + 1], b[k:k + 1]) for k in range(len(a))], axis=1)
        srt = np.sort(per_seg, axis=1)
        pts = np.array([panel.polyline[np.argmin(np.linalg.norm(panel.polyline - p, axis=1))] for p in x])
        near_vertex = np.linalg.norm(pts - x, axis=1) - np.abs(d) < 0.01
        ok = (np.abs(d) > 0.01) & (srt[:, 1] - srt[:, 0] > 0.01) & ~near_vertex
        assert ok.sum() > 50
        assert np.allclose(g[ok], 1.0, atol=1e-3)


@given(st.integers(0, 10_000))
def test_sample_boundary_points_lie_on_boundary(seed):
    sq = square_panel(0.5)
    pts = sample_boundary(sq, 64, np.random.default_rng(seed))
    assert pts.shape == (64, 2)
    assert np.abs(sdf_oracle(sq, pts)).max() < 1e-12
