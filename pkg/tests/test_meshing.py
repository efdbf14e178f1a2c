import warnings

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sewfield.meshing import (
    BOUNDARY_TOL,
    EndpointSet,
    FunctionField,
    LatentField,
    MeshingError,
    OracleField,
    boundary_vertices,
    chamfer,
    extract_mesh,
    find_endpoints,
    fit_edge,
    mesh_panel,
    mesh_svg,
    mesh_to_obj,
    project_to_zero,
    segment_boundary,
    vertex_latent_jacobian,
)
from sewfield.nn import DTYPE
from sewfield.pattern import check_panel
from sewfield.pattern import Edge

from conftest import disk_field, rect_field, square_panel


def _disk(c=(0.1, -0.05), r=0.6):
    return LatentField(disk_field, np.r_[c, r])


def test_disk_mesh_area_and_boundary():
    f = _disk()
    mesh = extract_mesh(f, grid_n=128)
    assert mesh.area() == pytest.approx(np.pi * 0.36, rel=2e-3)
    assert np.abs(f.values(mesh.boundary_points)[:, 0]).max() <= BOUNDARY_TOL
    assert mesh.flags == []


@settings(max_examples=8)
@given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.floats(0.2, 0.6))
def test_disk_meshes_are_consistent(cx, cy, r):
    f = _disk((cx, cy), r)
    mesh = extract_mesh(f, grid_n=64)
    assert np.abs(f.values(mesh.boundary_points)[:, 0]).max() <= BOUNDARY_TOL
    assert mesh.area() == pytest.approx(np.pi * r * r, rel=2e-2)
    # boundary loop is counter-clockwise and every face has positive area
    from sewfield.pattern import polygon_area

    assert polygon_area(mesh.boundary_points) > 0


def test_two_disks_keep_largest_loop():
    def two(x):
        a = np.linalg.norm(x - [-0.5, 0], axis=1) - 0.35
        b = np.linalg.norm(x - [0.55, 0], axis=1) - 0.2
        d = np.minimum(a, b)
        return np.stack([d, np.abs(d)], axis=1)

    mesh = extract_mesh(FunctionField(two), grid_n=64)
    assert "multiple_loops" in mesh.flags
    assert mesh.area() == pytest.approx(np.pi * 0.35**2, rel=3e-2)


def test_empty_interior_raises():
    f = FunctionField(lambda x: np.ones((len(x), 2)))
    with pytest.raises(MeshingError, match="empty interior"):
        extract_mesh(f, grid_n=16)


def test_project_to_zero_converges_on_disk():
    f = _disk((0, 0), 0.5)
    pts = np.random.default_rng(0).uniform(-0.8, 0.8, (50, 2))
    pts = pts[np.linalg.norm(pts, axis=1) > 0.1]
    out, d = project_to_zero(f, pts, tol=1e-10)
    assert np.abs(np.linalg.norm(out, axis=1) - 0.5).max() < 1e-8


def test_square_endpoints_are_corners():
    ends = find_endpoints(OracleField(square_panel(0.5)))
    corners = square_panel(0.5).endpoints
    assert len(ends) == 4
    d = np.linalg.norm(ends.centers[:, None] - corners[None], axis=-1).min(1)
    assert d.max() < 5e-3


def test_oracle_square_round_trip():
    mp = mesh_panel(OracleField(square_panel(0.5)))
    assert mp.panel.n_edges == 4
    check_panel(mp.panel)
    assert mp.mesh.area() == pytest.approx(1.0, rel=1e-3)


def test_corpus_panels_mesh_with_exact_edge_counts(corpus_panels):
    for panel in corpus_panels[:8]:
        mp = mesh_panel(OracleField(panel))
        assert mp.panel.n_edges == panel.n_edges
        check_panel(mp.panel, separation=False)


def test_disk_endpoints():
    ends = find_endpoints(_disk((0, 0), 0.5))
    xs = np.sort(ends.centers[:, 0])
    assert len(ends) == 2
    assert np.allclose(xs, [-0.5, 0.5], atol=5e-3)
    assert np.allclose(ends.centers[:, 1], 0, atol=5e-3)


def test_no_endpoint_region_raises():
    f = FunctionField(lambda x: np.stack([np.linalg.norm(x, axis=1) - 0.5, np.ones(len(x))], 1))
    with pytest.raises(MeshingError, match="d_p"):
        find_endpoints(f)


def test_segmentation_errors_and_collapse():
    mesh = extract_mesh(_disk((0, 0), 0.5), grid_n=64)
    with pytest.raises(MeshingError, match="at least two"):
        segment_boundary(mesh, np.array([[0.5, 0.0]]))
    with pytest.raises(MeshingError, match="distinct"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            segment_boundary(mesh, np.array([[0.5, 0.0], [0.5001, 0.0]]))
    with pytest.warns(UserWarning, match="snapped"):
        seg = segment_boundary(mesh, np.array([[0.5, 0.0], [0.5001, 0.0], [-0.5, 0.0]]))
    assert "collapsed_endpoints" in seg.flags
    assert len(seg.segment_breaks) == 2
    with pytest.raises(MeshingError, match="degenerate"):
        segment_boundary(mesh, mesh.boundary_points)


def test_segments_cover_the_loop_once():
    mesh = extract_mesh(_disk((0, 0), 0.5), grid_n=64)
    seg = segment_boundary(mesh, EndpointSet(np.array([[0.5, 0], [0, 0.5], [-0.5, 0]]), np.ones(3)))
    parts = seg.segments()
    assert sum(len(p) - 1 for p in parts) == len(mesh.boundary)
    assert seg.segment_lengths().sum() == pytest.approx(
        np.linalg.norm(np.diff(np.vstack([mesh.boundary_points, mesh.boundary_points[:1]]), axis=0), axis=1).sum())


def test_fit_edge_line_and_curve():
    t = np.linspace(0, 1, 30)
    line = np.stack([t, 0.5 * t], 1)
    assert not fit_edge(line).is_curved
    e = Edge((0, 0), (1, 0), (0.5, 0.4))
    fitted = fit_edge(e.point_at(np.linspace(0, 1, 60)))
    assert fitted.is_curved
    assert np.allclose(fitted.control, (0.5, 0.4), atol=0.02)


# ------------------------------------------------------------------ iso-surface gradient


def _fd_vertex_jacobian(fn, theta, verts, h=1e-6):
    """Finite differences of the normal projection of each vertex onto the perturbed zero set."""
    theta = np.asarray(theta, dtype=float)
    cols = []
    for k in range(len(theta)):
        moved = []
        for s in (+1, -1):
            th = theta.copy()
            th[k] += s * h
            pts, _ = project_to_zero(LatentField(fn, th), verts, max_iter=20, tol=1e-13)
            moved.append(pts)
        cols.append((moved[0] - moved[1]) / (2 * h))
    return np.stack(cols, axis=1)


@pytest.mark.parametrize("fn,theta", [
    (disk_field, [0.1, -0.05, 0.55]),
    (rect_field, [0.05, 0.02, 0.5, 0.35]),
])
def test_vertex_jacobian_matches_finite_differences(fn, theta):
    mesh = extract_mesh(LatentField(fn, theta), grid_n=32)
    # tighten the boundary so both sides start from the same zero set
    verts, _ = project_to_zero(LatentField(fn, theta), mesh.boundary_points, max_iter=20, tol=1e-13)
    mesh.vertices[mesh.boundary] = verts
    J, valid = vertex_latent_jacobian(mesh, theta, fn)
    fd = _fd_vertex_jacobian(fn, theta, verts)
    if fn is rect_field:
        # corners are singular for the projection; compare away from them
        q = np.abs(verts - theta[:2]) - np.array(theta[2:])
        valid &= np.abs(q[:, 0] - q[:, 1]) > 0.05
    assert valid.sum() > 10
    assert np.abs(J[valid] - fd[valid]).max() < 1e-4


def test_disk_center_shift_moves_vertices_along_normal():
    theta = np.array([0.0, 0.0, 0.5])
    mesh = extract_mesh(LatentField(disk_field, theta), grid_n=32)
    J, valid = vertex_latent_jacobian(mesh, theta, disk_field)
    n = mesh.boundary_points / np.linalg.norm(mesh.boundary_points, axis=1, keepdims=True)
    assert np.allclose(J[:, 2], n, atol=1e-5)
    assert np.allclose(J[:, 0], n[:, :1] * n, atol=1e-5)


def test_boundary_vertices_backward_matches_jacobian():
    theta = np.array([0.05, 0.0, 0.45])
    mesh = extract_mesh(LatentField(disk_field, theta), grid_n=32)
    th = torch.tensor(theta, dtype=DTYPE, requires_grad=True)
    v = boundary_vertices(th, mesh, disk_field)
    assert torch.allclose(v, torch.as_tensor(mesh.boundary_points, dtype=DTYPE))
    w = torch.randn(v.shape, dtype=DTYPE)
    (v * w).sum().backward()
    J, _ = vertex_latent_jacobian(mesh, theta, disk_field)
    expect = np.einsum("ndk,nk->d", J, w.numpy())
    assert np.allclose(th.grad.numpy(), expect, atol=1e-8)


def test_chamfer_values():
    a = torch.tensor([[0.0, 0.0], [1.0, 0.0]], dtype=DTYPE)
    assert float(chamfer(a, a)) == 0.0
    b = a + torch.tensor([0.0, 0.5], dtype=DTYPE)
    assert float(chamfer(a, b)) == pytest.approx(0.5)
    assert float(chamfer(a, b, squared=False)) == pytest.approx(0.5)


def test_exports():
    mp = mesh_panel(OracleField(square_panel(0.5)), grid_n=32)
    obj = mesh_to_obj(mp.mesh)
    lines = obj.splitlines()
    assert sum(l.startswith("v ") for l in lines) == len(mp.mesh.vertices)
    assert sum(l.startswith("f ") for l in lines) == len(mp.mesh.faces)
    assert any(l.startswith("# segment_breaks") for l in lines)
    svg = mesh_svg(mp.mesh, mp.endpoints)
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert svg.count("<circle") == 4
