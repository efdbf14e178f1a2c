"""Panel meshes from implicit fields, endpoint detection, and the iso-surface gradient.

A *field* maps 2D points to ``(d_c, d_p)``.  :class:`LatentField` wraps a
differentiable ``fn(x, theta)`` (normally the VAE decoder with ``theta = z``);
:class:`OracleField` wraps the analytic panel distances so the pipeline can be
checked without a network.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
import torch
from sklearn.cluster import DBSCAN

from .nn import DTYPE, SPATIAL_H, spatial_gradient
from .oracles import sdf_oracle, udf_oracle
from .pattern import MAX_EDGES, Edge, Panel, polygon_area

log = logging.getLogger(__name__)

BOUNDARY_TOL = 1e-3
ENDPOINT_EPS = 0.025
ENDPOINT_GRID = 256
# endpoint basins cover well under 1% of the grid for any valid panel
MAX_CANDIDATE_FRAC = 0.05


class MeshingError(RuntimeError):
    """Meshing failed (empty interior, no endpoints, degenerate segmentation)."""


# ---------------------------------------------------------------- fields


class _GridCache:
    def __init__(self):
        self._grids: dict[int, np.ndarray] = {}

    def grid(self, fieldobj, n_points: int) -> np.ndarray:
        """Field values on the ``n_points x n_points`` lattice over [-1, 1]^2, shape (n, n, 2)."""
        if n_points in self._grids:
            return self._grids[n_points]
        for m, vals in self._grids.items():
            if (m - 1) % (n_points - 1) == 0:
                s = (m - 1) // (n_points - 1)
                return vals[::s, ::s]
        g = np.linspace(-1.0, 1.0, n_points)
        X = np.stack(np.meshgrid(g, g, indexing="xy"), axis=-1).reshape(-1, 2)
        vals = fieldobj.values(X).reshape(n_points, n_points, 2)
        self._grids[n_points] = vals
        return vals


class ImplicitField:
    """Base class: subclasses implement ``values``; gradients use central differences."""

    theta = None

    def __init__(self):
        self._cache = _GridCache()

    def values(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x: np.ndarray, h: float = SPATIAL_H) -> np.ndarray:
        """(N, 2 channels, 2) spatial gradient by central differences."""
        x = np.atleast_2d(x)
        st = np.concatenate([x + [h, 0], x - [h, 0], x + [0, h], x - [0, h]])
        v = self.values(st).reshape(4, len(x), 2)
        return np.stack([(v[0] - v[1]) / (2 * h), (v[2] - v[3]) / (2 * h)], axis=-1)

    def grid(self, n_points: int) -> np.ndarray:
        return self._cache.grid(self, n_points)


class LatentField(ImplicitField):
    """Field ``fn(x, theta)`` with fixed parameters ``theta`` (e.g. the VAE decoder and z)."""

    def __init__(self, fn, theta, chunk: int = 32768):
        super().__init__()
        self.fn = fn
        self.theta = torch.as_tensor(np.asarray(theta, dtype=float), dtype=DTYPE)
        self.chunk = chunk

    @classmethod
    def from_vae(cls, vae, z) -> "LatentField":
        return cls(vae.field, z)

    def values(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = []
        with torch.no_grad():
            for lo in range(0, len(x), self.chunk):
                out.append(self.fn(torch.as_tensor(x[lo:lo + self.chunk], dtype=DTYPE), self.theta).numpy())
        return np.concatenate(out, axis=0) if out else np.zeros((0, 2))


class OracleField(ImplicitField):
    """Analytic (d_c, d_p) of a panel."""

    def __init__(self, panel: Panel):
        super().__init__()
        self.panel = panel

    def values(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.stack([sdf_oracle(self.panel, x), udf_oracle(self.panel, x)], axis=-1)


class FunctionField(ImplicitField):
    """Field from a plain numpy function ``f(x) -> (N, 2)``."""

    def __init__(self, f):
        super().__init__()
        self.f = f

    def values(self, x):
        return np.asarray(self.f(np.atleast_2d(np.asarray(x, dtype=float))), dtype=float)


def as_field(z_or_field, model=None) -> ImplicitField:
    if isinstance(z_or_field, ImplicitField):
        return z_or_field
    if model is None:
        raise ValueError("a model is required to mesh a latent code")
    return LatentField.from_vae(model, z_or_field)


# ---------------------------------------------------------------- meshes


@dataclass
class PanelMesh:
    vertices: np.ndarray
    faces: np.ndarray
    boundary: np.ndarray
    segment_breaks: np.ndarray = dc_field(default_factory=lambda: np.zeros(0, dtype=int))
    flags: list = dc_field(default_factory=list)
    grid_n: int = 128

    @property
    def boundary_points(self) -> np.ndarray:
        return self.vertices[self.boundary]

    def area(self) -> float:
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        return 0.5 * float(cross.sum())

    def segments(self) -> list[np.ndarray]:
        """Boundary-loop positions of each edge segment, both break vertices included."""
        n = len(self.boundary)
        br = list(self.segment_breaks)
        out = []
        for k, s in enumerate(br):
            e = br[(k + 1) % len(br)]
            span = (e - s) % n or n
            out.append((s + np.arange(span + 1)) % n)
        return out

    def segment_points(self) -> list[np.ndarray]:
        pts = self.boundary_points
        return [pts[s] for s in self.segments()]

    def segment_lengths(self) -> np.ndarray:
        return np.array([np.linalg.norm(np.diff(p, axis=0), axis=1).sum() for p in self.segment_points()])


def _grid_mesh(n: int):
    g = np.linspace(-1.0, 1.0, n + 1)
    V = np.stack(np.meshgrid(g, g, indexing="xy"), axis=-1).reshape(-1, 2)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    F = np.concatenate([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)])
    return V, F


def project_to_zero(fieldobj: ImplicitField, pts: np.ndarray, max_iter: int = 5, tol: float = BOUNDARY_TOL,
                    max_step: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Newton steps ``v <- v - d grad / |grad|^2`` toward the zero level set of d_c."""
    pts = pts.copy()
    d = fieldobj.values(pts)[:, 0]
    for _ in range(max_iter):
        active = np.abs(d) > tol
        if not active.any():
            break
        g = fieldobj.grad(pts[active])[:, 0]
        gn2 = (g**2).sum(-1)
        ok = gn2 > 1e-12
        step = np.zeros_like(g)
        step[ok] = -(d[active][ok] / gn2[ok])[:, None] * g[ok]
        if max_step is not None:
            L = np.linalg.norm(step, axis=1, keepdims=True)
            step *= np.minimum(1.0, max_step / np.maximum(L, 1e-300))
        pts[active] += step
        d[active] = fieldobj.values(pts[active])[:, 0]
    return pts, d


def _trace_loops(edges: np.ndarray, V: np.ndarray) -> list[list[int]]:
    nxt: dict[int, list[int]] = {}
    for a, b in edges:
        nxt.setdefault(int(a), []).append(int(b))
    used = set()
    loops = []
    for a0, b0 in edges:
        if (int(a0), int(b0)) in used:
            continue
        loop = [int(a0)]
        used.add((int(a0), int(b0)))
        cur, prev = int(b0), int(a0)
        guard = 0
        while cur != loop[0] and guard < len(edges) + 1:
            loop.append(cur)
            cands = [c for c in nxt.get(cur, []) if (cur, c) not in used]
            if not cands:
                break
            if len(cands) > 1:
                # pinch vertex: take the sharpest left turn to keep loops simple
                d_in = V[cur] - V[prev]
                ang = [np.arctan2(np.cross(d_in, V[c] - V[cur]), np.dot(d_in, V[c] - V[cur])) for c in cands]
                c = cands[int(np.argmax(ang))]
            else:
                c = cands[0]
            used.add((cur, c))
            prev, cur = cur, c
            guard += 1
        if cur == loop[0] and len(loop) >= 3:
            loops.append(loop)
    return loops


def extract_mesh(z_or_field, model=None, grid_n: int = 128) -> PanelMesh:
    """Triangulated panel mesh whose boundary sits on the zero level set of d_c."""
    fieldobj = as_field(z_or_field, model)
    V, F = _grid_mesh(grid_n)
    dc = fieldobj.grid(grid_n + 1)[..., 0].reshape(-1)
    pos = dc > 0
    keep = ~pos[F].all(axis=1)
    F = F[keep]
    if len(F) == 0:
        raise MeshingError("empty interior: decoded field has no negative region")
    crossing = pos[F].any(axis=1)
    to_move = np.unique(F[crossing][pos[F[crossing]]])
    V = V.copy()
    if len(to_move):
        V[to_move], _ = project_to_zero(fieldobj, V[to_move], max_step=2.0 / grid_n)
    # boundary = directed edges without a twin
    e = np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]])
    key = e[:, 0].astype(np.int64) * len(V) + e[:, 1]
    twin = e[:, 1].astype(np.int64) * len(V) + e[:, 0]
    boundary_edges = e[~np.isin(key, twin)]
    loops = _trace_loops(boundary_edges, V)
    if not loops:
        raise MeshingError("no closed boundary loop")
    flags = []
    areas = [polygon_area(V[l]) for l in loops]
    best = int(np.argmax(np.abs(areas)))
    if len(loops) > 1:
        flags.append("multiple_loops")
        log.warning("decoded field has %d boundary loops; keeping the largest", len(loops))
        from .oracles import even_odd_inside

        cent = V[F].mean(axis=1)
        F = F[even_odd_inside(cent, V[loops[best]])]
    used = np.unique(F)
    remap = -np.ones(len(V), dtype=int)
    remap[used] = np.arange(len(used))
    return PanelMesh(V[used], remap[F], remap[np.array(loops[best])], flags=flags, grid_n=grid_n)


# ---------------------------------------------------------------- endpoints


@dataclass
class EndpointSet:
    centers: np.ndarray
    counts: np.ndarray

    def __len__(self):
        return len(self.centers)


def find_endpoints(z_or_field, model=None, eps: float = ENDPOINT_EPS, grid: int = ENDPOINT_GRID,
                   steps: int = 100, min_samples: int = 3, center_tol: float = 5e-3) -> EndpointSet:
    """Zero roots of d_p: grid filter, descent ``x -= 0.5 d_p grad/|grad|``, DBSCAN, cluster means."""
    fieldobj = as_field(z_or_field, model)
    pts = _endpoint_candidates(fieldobj, grid, eps)
    if len(pts) == 0:
        raise MeshingError("no grid point with d_p below eps")
    if len(pts) > MAX_CANDIDATE_FRAC * (grid + 1) ** 2:
        raise MeshingError(f"d_p below eps on {len(pts) / (grid + 1) ** 2:.0%} of the grid; no distinct endpoints")
    active = np.arange(len(pts))
    for _ in range(steps):
        p = pts[active]
        dp = fieldobj.values(p)[:, 1]
        gr = fieldobj.grad(p)[:, 1]
        gn = np.linalg.norm(gr, axis=1, keepdims=True)
        step = 0.5 * dp[:, None] * gr / np.maximum(gn, 1e-12)
        pts[active] = p - step
        active = active[np.abs(step).max(axis=1) >= 1e-9]
        if len(active) == 0:
            break
    labels = DBSCAN(eps=eps / 2, min_samples=min_samples).fit(pts).labels_
    ids = [k for k in np.unique(labels) if k >= 0]
    if not ids:
        raise MeshingError("no endpoint clusters found")
    centers = np.array([pts[labels == k].mean(axis=0) for k in ids])
    counts = np.array([(labels == k).sum() for k in ids])
    centers, counts = _merge_close(centers, counts, eps)
    dp = fieldobj.values(centers)[:, 1]
    keep = dp < center_tol
    if not keep.any():
        raise MeshingError("no endpoint cluster reaches a zero of d_p")
    return EndpointSet(centers[keep], counts[keep])


def _endpoint_candidates(fieldobj: ImplicitField, grid: int, eps: float, margin: float = 0.05) -> np.ndarray:
    """Lattice points with d_p < eps.

    The fine lattice is only evaluated where a neighbouring vertex of the
    half-resolution lattice is within ``eps + margin``; d_p is close to a
    distance function, so skipped points cannot fall below ``eps``.
    """
    g = np.linspace(-1.0, 1.0, grid + 1)
    X = np.stack(np.meshgrid(g, g, indexing="xy"), axis=-1)
    if grid % 2 or (grid + 1) in fieldobj._cache._grids:
        return X[fieldobj.grid(grid + 1)[..., 1] < eps]
    coarse = fieldobj.grid(grid // 2 + 1)[..., 1]
    lo = np.arange(grid + 1) // 2
    hi = (np.arange(grid + 1) + 1) // 2
    near = np.minimum.reduce([coarse[np.ix_(a, b)] for a in (lo, hi) for b in (lo, hi)]) < eps + margin
    cand = X[near]
    if len(cand) == 0:
        return cand
    return cand[fieldobj.values(cand)[:, 1] < eps]


def _merge_close(centers, counts, eps):
    centers, counts = list(centers), list(counts)
    merged = True
    while merged and len(centers) > 1:
        merged = False
        C = np.array(centers)
        d = np.linalg.norm(C[:, None] - C[None], axis=-1)
        d[np.diag_indices(len(C))] = np.inf
        i, j = np.unravel_index(np.argmin(d), d.shape)
        if d[i, j] <= eps:
            w = counts[i] + counts[j]
            centers[i] = (centers[i] * counts[i] + centers[j] * counts[j]) / w
            counts[i] = w
            del centers[j], counts[j]
            merged = True
    return np.array(centers), np.array(counts)


def segment_boundary(mesh: PanelMesh, endpoints: EndpointSet | np.ndarray) -> PanelMesh:
    """Snap endpoint centres to the boundary loop and split it into edge segments."""
    centers = endpoints.centers if isinstance(endpoints, EndpointSet) else np.asarray(endpoints, dtype=float)
    if len(mesh.boundary) == 0:
        raise MeshingError("empty boundary loop")
    if len(centers) < 2:
        raise MeshingError("need at least two endpoints to segment the boundary")
    bp = mesh.boundary_points
    snap = np.argmin(np.linalg.norm(bp[None] - centers[:, None], axis=-1), axis=1)
    uniq = np.unique(snap)
    flags = list(mesh.flags)
    if len(uniq) < len(snap):
        flags.append("collapsed_endpoints")
        warnings.warn(f"{len(snap) - len(uniq)} endpoint(s) snapped to an already used boundary vertex")
    if len(uniq) < 2:
        raise MeshingError("fewer than two distinct boundary breaks")
    if len(uniq) > MAX_EDGES or len(uniq) * 2 > len(mesh.boundary):
        raise MeshingError(f"degenerate segmentation: {len(uniq)} breaks on a {len(mesh.boundary)}-vertex loop")
    return PanelMesh(mesh.vertices, mesh.faces, mesh.boundary, np.sort(uniq), flags, mesh.grid_n)


# ---------------------------------------------------------------- panels


def fit_edge(points: np.ndarray, line_tol: float = 4e-3) -> Edge:
    """Straight edge or least-squares quadratic Bezier (fixed endpoints) through ``points``."""
    p0, p1 = points[0], points[-1]
    chord = p1 - p0
    L = np.linalg.norm(chord)
    if len(points) <= 2 or L == 0:
        return Edge(p0, p1)
    n = np.array([-chord[1], chord[0]]) / L
    dev = np.abs((points - p0) @ n)
    if dev.max() <= line_tol:
        return Edge(p0, p1)
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])
    t = s / s[-1]
    a = 2 * t * (1 - t)
    r = points - (1 - t)[:, None] ** 2 * p0 - (t**2)[:, None] * p1
    c = (a[:, None] * r).sum(0) / max((a**2).sum(), 1e-12)
    return Edge(p0, p1, c)


def mesh_to_panel(mesh: PanelMesh, scale: float = 1.0) -> Panel:
    edges = [fit_edge(p) for p in mesh.segment_points()]
    # close the loop exactly
    for k in range(len(edges)):
        nxt = edges[(k + 1) % len(edges)]
        if edges[k].end != nxt.start:
            edges[k] = Edge(edges[k].start, nxt.start, edges[k].control)
    return Panel(tuple(edges), scale)


@dataclass
class MeshedPanel:
    mesh: PanelMesh
    endpoints: EndpointSet
    panel: Panel


def mesh_panel(z_or_field, model=None, grid_n: int = 128, scale: float = 1.0) -> MeshedPanel:
    """Full pipeline: mesh, endpoints, segmentation, edge fitting."""
    fieldobj = as_field(z_or_field, model)
    mesh = extract_mesh(fieldobj, grid_n=grid_n)
    ends = find_endpoints(fieldobj)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mesh = segment_boundary(mesh, ends)
    return MeshedPanel(mesh, ends, mesh_to_panel(mesh, scale))


def panel_from_latent(z, vae, grid_n: int = 128, scale: float = 1.0) -> Panel:
    return mesh_panel(z, vae, grid_n=grid_n, scale=scale).panel


# ---------------------------------------------------------------- iso-surface gradient


def _dc_and_grad(fn, v: torch.Tensor, theta: torch.Tensor):
    g = spatial_gradient(lambda x, th: fn(x, th)[..., 0:1], v, theta)[..., 0, :]
    return g


def vertex_latent_jacobian(mesh: PanelMesh, theta, fn) -> tuple[np.ndarray, np.ndarray]:
    """Per-boundary-vertex sensitivity ``dv/dtheta`` (Nb, D, 2).

    ``dv/dtheta = -(d d_c/d theta) grad d_c / |grad d_c|^2`` evaluated at each
    boundary vertex; this is the normal displacement that keeps the vertex on
    the zero level set.  Vertices with a vanishing spatial gradient are
    excluded (zero rows) and reported in the returned ``valid`` mask.
    Interior vertices receive no latent gradient, so only boundary rows exist.
    """
    th = torch.as_tensor(np.asarray(theta, dtype=float), dtype=DTYPE)
    v = torch.as_tensor(mesh.boundary_points, dtype=DTYPE)
    with torch.no_grad():
        g = _dc_and_grad(fn, v, th).numpy()
    jac = torch.autograd.functional.jacobian(lambda t: fn(v, t)[..., 0], th, vectorize=True).numpy()
    gn2 = (g**2).sum(-1)
    valid = np.sqrt(gn2) >= 1e-6
    if not valid.all():
        warnings.warn(f"{(~valid).sum()} boundary vertices with singular d_c gradient excluded")
    out = np.zeros((len(v), len(th), 2))
    out[valid] = -jac[valid][:, :, None] * (g[valid] / gn2[valid, None])[:, None, :]
    return out, valid


class _IsoVertices(torch.autograd.Function):
    @staticmethod
    def forward(ctx, theta, verts, fn):
        ctx.fn = fn
        ctx.save_for_backward(theta, verts)
        return verts.clone()

    @staticmethod
    def backward(ctx, grad_v):
        theta, verts = ctx.saved_tensors
        fn = ctx.fn
        with torch.no_grad():
            g = _dc_and_grad(fn, verts, theta)
        gn2 = (g**2).sum(-1)
        valid = gn2.sqrt() >= 1e-6
        w = torch.where(valid, -(grad_v * g).sum(-1) / gn2.clamp_min(1e-300), torch.zeros_like(gn2))
        with torch.enable_grad():
            th = theta.detach().requires_grad_(True)
            dc = fn(verts, th)[..., 0]
            (gtheta,) = torch.autograd.grad((w * dc).sum(), th)
        return gtheta, None, None


def boundary_vertices(theta: torch.Tensor, mesh: PanelMesh, fn) -> torch.Tensor:
    """Boundary vertices as a function of ``theta`` with the iso-surface backward rule."""
    verts = torch.as_tensor(mesh.boundary_points, dtype=DTYPE)
    return _IsoVertices.apply(theta, verts, fn)


def chamfer(a: torch.Tensor, b: torch.Tensor, squared: bool = True) -> torch.Tensor:
    """Symmetric Chamfer distance: mean nearest distance both ways (squared by default)."""
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    if squared:
        return d2.min(1).values.mean() + d2.min(0).values.mean()
    d = d2.clamp_min(1e-300).sqrt()
    return 0.5 * (d.min(1).values.mean() + d.min(0).values.mean())


# ---------------------------------------------------------------- export


def mesh_to_obj(mesh: PanelMesh) -> str:
    lines = ["# panel mesh (2D, z = 0)", "# boundary " + " ".join(str(i + 1) for i in mesh.boundary)]
    if len(mesh.segment_breaks):
        lines.append("# segment_breaks " + " ".join(str(int(i)) for i in mesh.segment_breaks))
    if mesh.flags:
        lines.append("# flags " + " ".join(mesh.flags))
    lines += [f"v {x:.9g} {y:.9g} 0" for x, y in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    return "\n".join(lines) + "\n"


def mesh_svg(mesh: PanelMesh, endpoints: EndpointSet | None = None, size: int = 400) -> str:
    tf = lambda p: ((p[..., 0] + 1) * size / 2, (1 - p[..., 1]) * size / 2)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">']
    for f in mesh.faces:
        x, y = tf(mesh.vertices[f])
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x, y))
        out.append(f'<polygon points="{pts}" fill="#dde" stroke="#bbc" stroke-width="0.2"/>')
    colours = ["#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4"]
    segs = mesh.segment_points() if len(mesh.segment_breaks) else [np.vstack([mesh.boundary_points, mesh.boundary_points[:1]])]
    for k, s in enumerate(segs):
        x, y = tf(s)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x, y))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{colours[k % len(colours)]}" stroke-width="1.5"/>')
    if endpoints is not None:
        for c in endpoints.centers:
            x, y = tf(c)
            out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="none" stroke="#000"/>')
    out.append("</svg>")
    return "\n".join(out)
