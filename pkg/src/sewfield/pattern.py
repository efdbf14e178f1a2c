"""Sewing-pattern data model: edges, panels, placements, stitches.

Panels live in a normalized 2D frame (``[-1, 1]^2``); ``Panel.scale`` converts
normalized units to centimetres.  Placements map the panel frame into the 3D
body frame:  ``p3 = R @ [scale * x, scale * y, 0] + T``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from shapely.geometry import LinearRing

FLATTEN_TOL = 1e-3
EPS_SEP = 0.05
N_MAX = 12
MIN_EDGES = 3
MAX_EDGES = 16
MAX_STITCH_MULTIPLICITY = 4

Point = tuple[float, float]
EdgeRef = tuple[int, int]


class PatternError(ValueError):
    """Raised when a pattern, panel or edge violates its invariants."""


def _pt(p) -> Point:
    return (float(p[0]), float(p[1]))


@dataclass(frozen=True)
class Edge:
    start: Point
    end: Point
    control: Point | None = None

    def __post_init__(self):
        object.__setattr__(self, "start", _pt(self.start))
        object.__setattr__(self, "end", _pt(self.end))
        if self.control is not None:
            object.__setattr__(self, "control", _pt(self.control))

    @property
    def is_curved(self) -> bool:
        return self.control is not None

    def point_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)[..., None]
        p0, p1 = np.array(self.start), np.array(self.end)
        if self.control is None:
            return (1 - t) * p0 + t * p1
        c = np.array(self.control)
        return (1 - t) ** 2 * p0 + 2 * t * (1 - t) * c + t**2 * p1

    def flatten(self, tol: float = FLATTEN_TOL) -> np.ndarray:
        """Polyline from start to end (inclusive) within chordal tolerance ``tol``."""
        if self.control is None:
            return np.array([self.start, self.end])
        p0, c, p1 = np.array(self.start), np.array(self.control), np.array(self.end)
        # chord error of uniform steps is bounded by |B''| dt^2 / 8
        second = 2.0 * np.linalg.norm(p0 - 2 * c + p1)
        n = max(1, int(np.ceil(np.sqrt(second / (8.0 * tol)))))
        return self.point_at(np.linspace(0.0, 1.0, n + 1))

    def length(self) -> float:
        """Arc length (Gauss-Legendre quadrature for curves, exact for lines)."""
        p0, p1 = np.array(self.start), np.array(self.end)
        if self.control is None:
            return float(np.linalg.norm(p1 - p0))
        c = np.array(self.control)
        u, w = c - p0, p1 - c
        # speed |2(u + t(w - u))| is smooth except at its minimum, so split there
        k = w - u
        kk = float(k @ k)
        t_min = float(np.clip(-(u @ k) / kk, 0.0, 1.0)) if kk > 0 else 0.0
        nodes, weights = np.polynomial.legendre.leggauss(32)
        total = 0.0
        for lo, hi in ((0.0, t_min), (t_min, 1.0)):
            if hi - lo <= 0:
                continue
            t = lo + (hi - lo) * 0.5 * (nodes + 1.0)
            d = 2 * (u[None] + t[:, None] * k[None])
            total += 0.5 * (hi - lo) * np.sum(weights * np.linalg.norm(d, axis=1))
        return float(total)

    def split(self, t: float) -> tuple["Edge", "Edge"]:
        """Split at curve parameter ``t`` (de Casteljau); geometry is unchanged."""
        p0, p1 = np.array(self.start), np.array(self.end)
        if self.control is None:
            m = (1 - t) * p0 + t * p1
            return Edge(self.start, m), Edge(m, self.end)
        c = np.array(self.control)
        a = (1 - t) * p0 + t * c
        b = (1 - t) * c + t * p1
        m = (1 - t) * a + t * b
        return Edge(self.start, m, a), Edge(m, self.end, b)

    def param_at_fraction(self, frac: float) -> float:
        """Curve parameter at which the arc length reaches ``frac`` of the total."""
        if self.control is None:
            return float(frac)
        t = np.linspace(0.0, 1.0, 2049)
        pts = self.point_at(t)
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        return float(np.interp(frac * s[-1], s, t))

    def transformed(self, fn) -> "Edge":
        return Edge(fn(self.start), fn(self.end), None if self.control is None else fn(self.control))


@dataclass(frozen=True)
class Panel:
    edges: tuple[Edge, ...]
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def from_vertices(cls, vertices, scale: float = 1.0, controls=None) -> "Panel":
        """Closed loop through ``vertices``; ``controls[k]`` bends edge k (or None)."""
        v = np.asarray(vertices, dtype=float)
        n = len(v)
        controls = controls if controls is not None else [None] * n
        edges = [Edge(v[k], v[(k + 1) % n], controls[k]) for k in range(n)]
        return cls(tuple(edges), scale)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def endpoints(self) -> np.ndarray:
        """Endpoint set O (each edge start; loop closure makes ends redundant)."""
        return np.array([e.start for e in self.edges])

    @cached_property
    def polyline(self) -> np.ndarray:
        """Flattened closed boundary, first point not repeated."""
        parts = [e.flatten()[:-1] for e in self.edges]
        return np.concatenate(parts, axis=0)

    @cached_property
    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        a = self.polyline
        return a, np.roll(a, -1, axis=0)

    def signed_area(self) -> float:
        return polygon_area(self.polyline)

    def edge_lengths(self, cm: bool = True) -> np.ndarray:
        lengths = np.array([e.length() for e in self.edges])
        return lengths * self.scale if cm else lengths

    def perimeter(self, cm: bool = True) -> float:
        return float(self.edge_lengths(cm).sum())

    def transformed(self, fn, scale: float | None = None) -> "Panel":
        return Panel(tuple(e.transformed(fn) for e in self.edges), self.scale if scale is None else scale)


@dataclass(frozen=True)
class Placement:
    T: tuple[float, float, float] = (0.0, 0.0, 0.0)
    R: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "T", tuple(float(v) for v in self.T))
        object.__setattr__(self, "R", tuple(float(v) for v in self.R))

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.R)

    def apply(self, pts2d: np.ndarray, scale: float) -> np.ndarray:
        """Map normalized panel-frame points to the 3D body frame (cm)."""
        pts2d = np.asarray(pts2d, dtype=float)
        p = np.zeros(pts2d.shape[:-1] + (3,))
        p[..., :2] = pts2d * scale
        return p @ self.matrix().T + np.array(self.T)


@dataclass(frozen=True, order=True)
class Stitch:
    a: EdgeRef
    b: EdgeRef

    def __post_init__(self):
        a = (int(self.a[0]), int(self.a[1]))
        b = (int(self.b[0]), int(self.b[1]))
        if a == b:
            raise PatternError(f"stitch joins edge {a} to itself")
        if b < a:
            a, b = b, a
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def __iter__(self):
        return iter((self.a, self.b))


@dataclass(frozen=True)
class SewingPattern:
    panels: tuple[Panel, ...]
    placements: tuple[Placement, ...]
    stitches: tuple[Stitch, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "panels", tuple(self.panels))
        object.__setattr__(self, "placements", tuple(self.placements))
        object.__setattr__(self, "stitches", tuple(sorted(set(self.stitches))))

    @property
    def n_panels(self) -> int:
        return len(self.panels)

    def edge_refs(self) -> list[EdgeRef]:
        return [(i, j) for i, p in enumerate(self.panels) for j in range(p.n_edges)]

    def stitch_multiplicity(self) -> dict[EdgeRef, int]:
        counts = {ref: 0 for ref in self.edge_refs()}
        for s in self.stitches:
            for ref in s:
                counts[ref] = counts.get(ref, 0) + 1
        return counts

    def partners(self) -> dict[EdgeRef, list[EdgeRef]]:
        out: dict[EdgeRef, list[EdgeRef]] = {}
        for s in self.stitches:
            out.setdefault(s.a, []).append(s.b)
            out.setdefault(s.b, []).append(s.a)
        return out

    def edge_length(self, ref: EdgeRef) -> float:
        p = self.panels[ref[0]]
        return p.edges[ref[1]].length() * p.scale

    def placed_edge_points(self, ref: EdgeRef, t) -> np.ndarray:
        p = self.panels[ref[0]]
        return self.placements[ref[0]].apply(p.edges[ref[1]].point_at(t), p.scale)

    def replace(self, **kw) -> "SewingPattern":
        d = dict(panels=self.panels, placements=self.placements, stitches=self.stitches)
        d.update(kw)
        return SewingPattern(**d)


# ---------------------------------------------------------------- geometry


def seam_groups(pattern: SewingPattern) -> list[tuple[EdgeRef, tuple[EdgeRef, ...]]]:
    """Seams as ``(host, partners)``; a many-to-one seam is one group, a plain stitch is ``(a, (b,))``."""
    partners = pattern.partners()
    groups, seen = [], set()
    for s in pattern.stitches:
        a, b = s.a, s.b
        if len(partners[a]) > 1 and len(partners[b]) == 1:
            host, group = a, partners[a]
        elif len(partners[b]) > 1 and len(partners[a]) == 1:
            host, group = b, partners[b]
        else:
            host, group = a, [b]
        key = (host, tuple(sorted(group)))
        if key not in seen:
            seen.add(key)
            groups.append(key)
    return groups


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_axis_angle(axis, angle: float) -> tuple[float, float, float, float]:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    q = np.concatenate([[np.cos(h)], np.sin(h) * axis])
    return canonical_quat(q)


def quat_mul(a, b) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def canonical_quat(q) -> tuple[float, float, float, float]:
    """Unit quaternion with w >= 0 (first nonzero component positive when w == 0)."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    nz = np.flatnonzero(np.abs(q) > 1e-12)
    if len(nz) and q[nz[0]] < 0:
        q = -q
    return tuple(float(v) for v in q)


def resample_closed(poly: np.ndarray, n: int) -> np.ndarray:
    """``n`` points evenly spaced by arc length along a closed polyline."""
    closed = np.vstack([poly, poly[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    u = np.linspace(0.0, s[-1], n, endpoint=False)
    return np.stack([np.interp(u, s, closed[:, 0]), np.interp(u, s, closed[:, 1])], axis=1)


# ---------------------------------------------------------------- validation


def check_edge(edge: Edge) -> None:
    if np.allclose(edge.start, edge.end, atol=0.0, rtol=0.0):
        raise PatternError("edge start equals end")
    if edge.control is not None and not np.all(np.isfinite(edge.control)):
        raise PatternError("edge control point is not finite")


def check_panel(panel: Panel, *, separation: bool = True, max_edges: int | None = MAX_EDGES) -> Panel:
    """Validate the panel invariants; returns the panel for chaining."""
    n = panel.n_edges
    if n < MIN_EDGES or (max_edges is not None and n > max_edges):
        raise PatternError(f"panel has {n} edges, expected [{MIN_EDGES}, {max_edges}]")
    if not (panel.scale > 0 and np.isfinite(panel.scale)):
        raise PatternError("panel scale must be positive")
    for k, e in enumerate(panel.edges):
        check_edge(e)
        nxt = panel.edges[(k + 1) % n]
        if e.end != nxt.start:
            raise PatternError(f"loop not closed between edges {k} and {(k + 1) % n}")
    poly = panel.polyline
    if not np.all(np.isfinite(poly)) or np.abs(poly).max() > 1.0:
        raise PatternError("panel boundary leaves [-1, 1]^2")
    if polygon_area(poly) <= 0:
        raise PatternError("panel boundary is not counter-clockwise")
    if not LinearRing(poly).is_simple:
        raise PatternError("panel boundary self-intersects")
    if separation:
        o = panel.endpoints
        d = np.linalg.norm(o[:, None] - o[None], axis=-1)
        d[np.diag_indices(len(o))] = np.inf
        if d.min() <= EPS_SEP:
            raise PatternError(f"endpoints closer than {EPS_SEP}")
    return panel


def check_placement(pl: Placement) -> Placement:
    if not np.all(np.isfinite(pl.T)):
        raise PatternError("placement translation is not finite")
    if abs(np.linalg.norm(pl.R) - 1.0) > 1e-6:
        raise PatternError("placement rotation is not a unit quaternion")
    return pl


def check_pattern(pattern: SewingPattern, *, flattened: bool = False) -> SewingPattern:
    """Validate every invariant of ``pattern``.

    With ``flattened=True`` the endpoint-separation and edge-count ceilings are
    relaxed (subdivision may add close vertices) and stitch multiplicity must be
    at most one.
    """
    if not 1 <= pattern.n_panels <= N_MAX:
        raise PatternError(f"pattern has {pattern.n_panels} panels, expected [1, {N_MAX}]")
    if len(pattern.placements) != pattern.n_panels:
        raise PatternError("placements and panels differ in length")
    for i, p in enumerate(pattern.panels):
        try:
            check_panel(p, separation=not flattened, max_edges=None if flattened else MAX_EDGES)
        except PatternError as exc:
            raise PatternError(f"panel {i}: {exc}") from None
    for pl in pattern.placements:
        check_placement(pl)
    for s in pattern.stitches:
        for pi, ei in s:
            if not (0 <= pi < pattern.n_panels and 0 <= ei < pattern.panels[pi].n_edges):
                raise PatternError(f"stitch references missing edge ({pi}, {ei})")
    limit = 1 if flattened else MAX_STITCH_MULTIPLICITY
    worst = max(pattern.stitch_multiplicity().values(), default=0)
    if worst > limit:
        raise PatternError(f"edge stitch multiplicity {worst} exceeds {limit}")
    return pattern


def is_valid(pattern: SewingPattern, **kw) -> bool:
    try:
        check_pattern(pattern, **kw)
    except PatternError:
        return False
    return True


# ---------------------------------------------------------------- normalization


def normalize_panel(vertices, controls: Sequence | None = None, half_width: float = 0.9):
    """Normalize a closed contour given in cm.

    Returns ``(panel, center)``: the panel is centred on its bounding box and
    isotropically scaled so the box fits ``[-half_width, half_width]^2``;
    ``center`` is the bounding-box centre in cm.  Clockwise input is reversed.
    """
    v = np.asarray(vertices, dtype=float)
    n = len(v)
    controls = list(controls) if controls is not None else [None] * n
    if n < 3 or abs(polygon_area(v)) < 1e-12:
        raise PatternError("degenerate contour: zero area")
    if polygon_area(v) < 0:
        # reverse traversal; edge k (v[k] -> v[k+1]) becomes v[k+1] -> v[k]
        v = v[::-1].copy()
        controls = [controls[(n - 2 - k) % n] for k in range(n)]
    raw = Panel.from_vertices(v, 1.0, controls).polyline
    lo, hi = raw.min(axis=0), raw.max(axis=0)
    center = 0.5 * (lo + hi)
    scale = float((hi - lo).max() / (2 * half_width))

    def fwd(p):
        return (np.asarray(p) - center) / scale

    panel = Panel.from_vertices(fwd(v), scale, [None if c is None else fwd(c) for c in controls])
    return panel, (float(center[0]), float(center[1]))


def denormalize_panel(panel: Panel, center: Iterable[float] = (0.0, 0.0)) -> tuple[np.ndarray, list]:
    """Inverse of :func:`normalize_panel`: vertices and controls in cm."""
    c = np.asarray(tuple(center), dtype=float)
    verts = np.array([e.start for e in panel.edges]) * panel.scale + c
    ctrls = [None if e.control is None else np.asarray(e.control) * panel.scale + c for e in panel.edges]
    return verts, ctrls
