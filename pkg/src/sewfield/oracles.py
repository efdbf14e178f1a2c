"""Analytic distance fields of a panel: boundary SDF and endpoint UDF."""
from __future__ import annotations

import numpy as np

from .pattern import Panel


def _as_points(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


def segment_distance(x: np.ndarray, a: np.ndarray, b: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Minimum distance from each point in ``x`` (n, 2) to segments ``a -> b``."""
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom = np.where(denom > 0, denom, 1.0)
    out = np.empty(len(x))
    for lo in range(0, len(x), chunk):
        xs = x[lo:lo + chunk]
        ap = xs[:, None, :] - a[None]
        t = np.clip(np.einsum("nkj,kj->nk", ap, ab) / denom, 0.0, 1.0)
        d = ap - t[..., None] * ab[None]
        out[lo:lo + chunk] = np.sqrt(np.einsum("nkj,nkj->nk", d, d).min(axis=1))
    return out


def even_odd_inside(x: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd rule point-in-polygon test for a closed polyline."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a, b = poly, np.roll(poly, -1, axis=0)
    px, py = x[:, 0:1], x[:, 1:2]
    straddle = (a[None, :, 1] > py) != (b[None, :, 1] > py)
    dy = b[:, 1] - a[:, 1]
    dy = np.where(dy == 0, 1.0, dy)
    xc = a[None, :, 0] + (py - a[None, :, 1]) * (b[None, :, 0] - a[None, :, 0]) / dy[None]
    crossings = np.count_nonzero(straddle & (px < xc), axis=1)
    return (crossings % 2) == 1


def sdf_oracle(panel: Panel, x) -> np.ndarray | float:
    """Signed distance to the flattened boundary; negative inside."""
    pts, single = _as_points(x)
    a, b = panel.segments
    d = segment_distance(pts, a, b)
    inside = even_odd_inside(pts, panel.polyline)
    out = np.where(inside & (d > 0), -d, d)
    return float(out[0]) if single else out


def udf_oracle(panel: Panel, x) -> np.ndarray | float:
    """Distance to the nearest edge endpoint."""
    pts, single = _as_points(x)
    o = panel.endpoints
    d = np.sqrt(((pts[:, None, :] - o[None]) ** 2).sum(-1)).min(axis=1)
    return float(d[0]) if single else d


def sample_boundary(panel: Panel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Arc-length stratified random points on the boundary (one per stratum)."""
    poly = panel.polyline
    closed = np.vstack([poly, poly[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    u = (np.arange(n) + rng.random(n)) * (s[-1] / n)
    return np.stack([np.interp(u, s, closed[:, 0]), np.interp(u, s, closed[:, 1])], axis=1)
