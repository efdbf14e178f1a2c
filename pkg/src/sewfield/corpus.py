"""Procedural sewing-pattern corpus: skirts, tees, pants and dresses.

Every panel is drafted in centimetres as a counter-clockwise loop of named
edges, normalized with :func:`normalize_panel`, and placed in a body frame
with ``y`` up and ``z`` pointing forward.  Stitches come from the family
templates and are expressed with edge names before being resolved to indices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .pattern import (
    Edge,
    PatternError,
    Placement,
    SewingPattern,
    Stitch,
    canonical_quat,
    check_pattern,
    normalize_panel,
    quat_from_axis_angle,
    seam_groups,
)

FAMILIES = ("skirt", "tee", "pants", "dress")
SEAM_RATIO_RANGE = (0.8, 1.25)


def q9(v: float) -> float:
    return float(f"{float(v):.9g}")


@dataclass
class Draft:
    """A panel under construction: named CCW edges in cm plus its placement."""

    name: str
    edges: list  # (start, end, control | None, edge name)
    R: tuple = (1.0, 0.0, 0.0, 0.0)
    T0: tuple = (0.0, 0.0, 0.0)

    def index(self, edge_name: str) -> int:
        for k, e in enumerate(self.edges):
            if e[3] == edge_name:
                return k
        raise KeyError(f"{self.name} has no edge {edge_name!r}")


def loop(points, names, controls=None) -> list:
    n = len(points)
    controls = controls or [None] * n
    return [(tuple(points[k]), tuple(points[(k + 1) % n]), controls[k], names[k]) for k in range(n)]


def mirrored(edges) -> list:
    """Mirror a CCW edge loop across x = 0, keeping it CCW and its edge names."""
    m = lambda p: None if p is None else (-p[0], p[1])
    return [(m(e), m(s), m(c), name) for s, e, c, name in reversed(edges)]


def rot_y(angle):
    return quat_from_axis_angle((0, 1, 0), angle)


def rot_z(angle):
    return quat_from_axis_angle((0, 0, 1), angle)


def bezier_len(p0, c, p1) -> float:
    return Edge(p0, p1, c).length()


def _solve_monotone(fn, target, lo, hi, iters=60):
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if fn(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------- drafts


def _gores(rng, g, waist_circ, length, waist_y, flare, names_prefix="gore", angle0=None):
    """``g`` trapezoid gores arranged around the body, side seams stitched cyclically."""
    w = waist_circ / g
    h = w * flare
    radius = waist_circ / (2 * math.pi) * 1.15
    hem_curve = rng.random() < 0.6
    waist_curve = rng.random() < 0.4
    split_hem = rng.random() < 0.3
    bulge = rng.uniform(0.02, 0.07) * length if hem_curve else 0.0
    dip = rng.uniform(1.0, 2.5) if waist_curve else 0.0
    drafts = []
    for k in range(g):
        theta = (2 * math.pi * k / g) if angle0 is None else angle0 + 2 * math.pi * k / g
        bl, br, tr, tl = (-h / 2, -length), (h / 2, -length), (w / 2, 0.0), (-w / 2, 0.0)
        waist_c = (0.0, -2 * dip) if waist_curve else None
        if split_hem:
            mid = (0.0, -length - bulge)
            cl = (-h / 4, -length - bulge) if hem_curve else None
            cr = (h / 4, -length - bulge) if hem_curve else None
            pts = [bl, mid, br, tr, tl]
            names = ["hem_l", "hem_r", "right", "waist", "left"]
            ctrls = [cl, cr, None, waist_c, None]
        else:
            pts = [bl, br, tr, tl]
            names = ["hem", "right", "waist", "left"]
            ctrls = [(0.0, -length - 2 * bulge) if hem_curve else None, None, waist_c, None]
        T0 = (radius * math.sin(theta), waist_y, radius * math.cos(theta))
        drafts.append(Draft(f"{names_prefix}{k}", loop(pts, names, ctrls), rot_y(theta), T0))
    stitches = [((f"{names_prefix}{k}", "right"), (f"{names_prefix}{(k + 1) % g}", "left")) for k in range(g)]
    return drafts, stitches


def _bodice(rng, body, length, chest, shoulder_y, z_off, vneck):
    hw = chest / 4
    armhole_depth = rng.uniform(18, 23) * body
    drop = rng.uniform(3, 5.5)
    sx = hw * rng.uniform(0.74, 0.84)
    nx = rng.uniform(7.5, 9.5) * body
    ya = length - armhole_depth
    top = length - drop
    ac_r = (sx + 0.1 * (hw - sx), ya + 0.2 * (top - ya))
    ac_l = (-ac_r[0], ac_r[1])
    front_depth = rng.uniform(7, 12)
    back_depth = rng.uniform(1.5, 3.0)
    out = {}
    for side, depth in (("front", front_depth), ("back", back_depth)):
        pts = [(-hw, 0.0), (hw, 0.0), (hw, ya), (sx, top), (nx, length)]
        names = ["hem", "side_r", "arm_r", "shoulder_r"]
        ctrls = [None, None, ac_r, None]
        if side == "front" and vneck:
            pts += [(0.0, length - depth), (-nx, length), (-sx, top), (-hw, ya)]
            names += ["neck_r", "neck_l", "shoulder_l", "arm_l", "side_l"]
            ctrls += [None, None, None, ac_l, None]
        else:
            pts += [(-nx, length), (-sx, top), (-hw, ya)]
            names += ["neck", "shoulder_l", "arm_l", "side_l"]
            ctrls += [(0.0, length - 2 * depth), None, ac_l, None]
        base_y = shoulder_y - length
        if side == "front":
            out[side] = Draft("front", loop(pts, names, ctrls), (1.0, 0.0, 0.0, 0.0), (0.0, base_y, z_off))
        else:
            out[side] = Draft("back", loop(pts, names, ctrls), rot_y(math.pi), (0.0, base_y, -z_off))
    stitches = [
        (("front", "side_r"), ("back", "side_l")),
        (("front", "side_l"), ("back", "side_r")),
        (("front", "shoulder_r"), ("back", "shoulder_l")),
        (("front", "shoulder_l"), ("back", "shoulder_r")),
    ]
    arm_len = bezier_len((hw, ya), ac_r, (sx, top))
    geo = dict(hw=hw, ya=ya, top=top, armhole=arm_len, nx=nx, base_y=base_y, shoulder_y=shoulder_y)
    return out, stitches, geo


def _sleeves(rng, body, geo):
    target = geo["armhole"] * rng.uniform(1.0, 1.08)
    cap_h = rng.uniform(9, 13)
    length = rng.uniform(20, 55) * body

    def cap_len(bw):
        return bezier_len((bw / 2, length - cap_h), (bw / 2 * 0.45, length + 0.05 * cap_h), (0.0, length))

    bw = _solve_monotone(cap_len, target, 2.0, 80.0)
    cw = bw * rng.uniform(0.65, 0.95)
    pts = [(-cw / 2, 0.0), (cw / 2, 0.0), (bw / 2, length - cap_h), (0.0, length), (-bw / 2, length - cap_h)]
    names = ["cuff", "under_r", "cap_r", "cap_l", "under_l"]
    ctrls = [None, None, (bw / 2 * 0.45, length + 0.05 * cap_h), (-bw / 2 * 0.45, length + 0.05 * cap_h), None]
    arm_y = geo["shoulder_y"] - (geo["shoulder_y"] - geo["base_y"] - geo["ya"]) * 0.5
    reach = geo["hw"] + 2.0 + length
    right = Draft("sleeve_r", loop(pts, names, ctrls), rot_z(math.pi / 2), (reach, arm_y, 0.0))
    left = Draft("sleeve_l", loop(pts, names, ctrls), rot_z(-math.pi / 2), (-reach, arm_y, 0.0))
    stitches = [
        (("sleeve_r", "cap_r"), ("front", "arm_r")),
        (("sleeve_r", "cap_l"), ("back", "arm_l")),
        (("sleeve_l", "cap_r"), ("front", "arm_l")),
        (("sleeve_l", "cap_l"), ("back", "arm_r")),
        (("sleeve_r", "under_r"), ("sleeve_r", "under_l")),
        (("sleeve_l", "under_r"), ("sleeve_l", "under_l")),
    ]
    return [right, left], stitches


def _collar(rng, name, neck_len, height, T0, R):
    bottom = neck_len * rng.uniform(0.97, 1.0)
    top = bottom * rng.uniform(0.85, 0.95)
    pts = [(-bottom / 2, 0.0), (bottom / 2, 0.0), (top / 2, height), (-top / 2, height)]
    return Draft(name, loop(pts, ["bottom", "end_r", "top", "end_l"]), R, T0)


def draft_skirt(rng, body):
    g = int(rng.integers(2, 5))
    waist = 70 * body * rng.uniform(0.9, 1.1)
    length = rng.uniform(45, 80) * body
    drafts, stitches = _gores(rng, g, waist, length, 100 * body, rng.uniform(1.3, 2.2))
    return drafts, stitches


def draft_tee(rng, body):
    chest = 96 * body * rng.uniform(0.92, 1.12)
    length = rng.uniform(60, 74) * body
    vneck = rng.random() < 0.3
    z_off = rng.uniform(10, 12)
    bodice, stitches, geo = _bodice(rng, body, length, chest, 150 * body, z_off, vneck)
    sleeves, s2 = _sleeves(rng, body, geo)
    drafts = [bodice["front"], bodice["back"], *sleeves]
    stitches = stitches + s2
    n_collar = int(rng.integers(0, 3))
    if n_collar:
        height = rng.uniform(6, 8)
        back_neck = bodice["back"]
        k = back_neck.index("neck")
        s, e, c, _ = back_neck.edges[k]
        neck_len = bezier_len(s, c, e)
        neck_y = 150 * body + height / 2 - 2.0
        drafts.append(_collar(rng, "collar_b", neck_len, height, (0.0, neck_y, -z_off - 1), rot_y(math.pi)))
        stitches.append((("collar_b", "bottom"), ("back", "neck")))
        if n_collar == 2:
            front = bodice["front"]
            if vneck:
                parts = [front.edges[front.index(n)] for n in ("neck_r", "neck_l")]
                neck_len = sum(bezier_len(s, c, e) for s, e, c, _ in parts)
                fronts = [("front", "neck_r"), ("front", "neck_l")]
            else:
                s, e, c, _ = front.edges[front.index("neck")]
                neck_len = bezier_len(s, c, e)
                fronts = [("front", "neck")]
            drafts.append(_collar(rng, "collar_f", neck_len, height, (0.0, neck_y - 4.0, z_off + 1), (1.0, 0, 0, 0)))
            stitches += [(("collar_f", "bottom"), f) for f in fronts]
            stitches += [(("collar_f", "end_r"), ("collar_b", "end_l")), (("collar_f", "end_l"), ("collar_b", "end_r"))]
    return drafts, stitches


def draft_pants(rng, body):
    waist = 74 * body * rng.uniform(0.92, 1.1)
    leg = rng.uniform(45, 100) * body
    wx = waist / 4
    crotch_depth = rng.uniform(22, 27) * body
    hem_w = rng.uniform(17, 25) * body
    waist_y = 100 * body
    z_off = rng.uniform(9, 11)
    designs = {}
    for side, cx in (("front", rng.uniform(4, 7)), ("back", rng.uniform(8, 12))):
        c0 = (wx - cx) / 2
        pts = [(c0 - hem_w / 2, -leg), (c0 + hem_w / 2, -leg), (wx, 0.0), (0.0, 0.0), (-cx, -crotch_depth)]
        names = ["hem", "outseam", "waist", "crotch", "inseam"]
        ctrls = [None, None, None, (-0.15 * cx, -crotch_depth * 0.95), None]
        designs[side] = loop(pts, names, ctrls)
    gap = 1.0
    drafts = [
        Draft("front_a", designs["front"], (1.0, 0, 0, 0), (gap, waist_y, z_off)),
        Draft("front_b", mirrored(designs["front"]), (1.0, 0, 0, 0), (-gap, waist_y, z_off)),
        Draft("back_a", mirrored(designs["back"]), rot_y(math.pi), (gap, waist_y, -z_off)),
        Draft("back_b", designs["back"], rot_y(math.pi), (-gap, waist_y, -z_off)),
    ]
    stitches = [
        (("front_a", "outseam"), ("back_a", "outseam")),
        (("front_b", "outseam"), ("back_b", "outseam")),
        (("front_a", "inseam"), ("back_a", "inseam")),
        (("front_b", "inseam"), ("back_b", "inseam")),
        (("front_a", "crotch"), ("front_b", "crotch")),
        (("back_a", "crotch"), ("back_b", "crotch")),
    ]
    if rng.random() < 0.5:
        height = rng.uniform(8, 10)
        band_len = 2 * wx
        top = band_len * rng.uniform(0.92, 0.98)
        pts = [(-band_len / 2, 0.0), (band_len / 2, 0.0), (top / 2, height), (-top / 2, height)]
        names = ["bottom", "end_r", "top", "end_l"]
        drafts.append(Draft("band_f", loop(pts, names), (1.0, 0, 0, 0), (0.0, waist_y + 1.0, z_off + 1)))
        drafts.append(Draft("band_b", loop(pts, names), rot_y(math.pi), (0.0, waist_y + 1.0, -z_off - 1)))
        stitches += [
            (("band_f", "bottom"), ("front_a", "waist")),
            (("band_f", "bottom"), ("front_b", "waist")),
            (("band_b", "bottom"), ("back_a", "waist")),
            (("band_b", "bottom"), ("back_b", "waist")),
            (("band_f", "end_r"), ("band_b", "end_l")),
            (("band_f", "end_l"), ("band_b", "end_r")),
        ]
    return drafts, stitches


def draft_dress(rng, body):
    g, n_sleeves = [(2, 2), (4, 0), (4, 2), (6, 0)][int(rng.integers(0, 4))]
    chest = 92 * body * rng.uniform(0.92, 1.1)
    length = rng.uniform(38, 46) * body
    z_off = rng.uniform(10, 12)
    bodice, stitches, geo = _bodice(rng, body, length, chest, 145 * body, z_off, vneck=False)
    drafts = [bodice["front"], bodice["back"]]
    if n_sleeves:
        sleeves, s2 = _sleeves(rng, body, geo)
        drafts += sleeves
        stitches = stitches + s2
    gores, s3 = _gores(rng, g, chest, rng.uniform(45, 75) * body, geo["base_y"], rng.uniform(1.3, 2.0),
                       angle0=math.pi / g - math.pi / 2 if g > 2 else 0.0)
    drafts += gores
    stitches = stitches + s3
    for k in range(g):
        theta = (math.pi / g - math.pi / 2 if g > 2 else 0.0) + 2 * math.pi * k / g
        host = "front" if math.cos(theta) > 1e-9 else "back"
        stitches.append(((f"gore{k}", "waist"), (host, "hem")))
    return drafts, stitches


DRAFTERS = {"skirt": draft_skirt, "tee": draft_tee, "pants": draft_pants, "dress": draft_dress}


# ---------------------------------------------------------------- assembly


def assemble(drafts, named_stitches) -> SewingPattern:
    """Normalize drafted panels, derive placements and resolve stitch names."""
    panels, placements = [], []
    index = {}
    for i, d in enumerate(drafts):
        verts = [e[0] for e in d.edges]
        ctrls = [e[2] for e in d.edges]
        panel, center = normalize_panel(verts, ctrls)
        panel = panel.transformed(lambda p: (q9(p[0]), q9(p[1])), scale=q9(panel.scale))
        R = canonical_quat(d.R)
        rot = Placement(R=R).matrix()
        T = np.asarray(d.T0, dtype=float) + rot @ np.array([center[0], center[1], 0.0])
        R = tuple(q9(v) for v in R)
        placements.append(Placement(T=tuple(q9(v) for v in T), R=R))
        panels.append(panel)
        index[d.name] = (i, d)
    stitches = []
    for (pa, ea), (pb, eb) in named_stitches:
        ia, da = index[pa]
        ib, db = index[pb]
        stitches.append(Stitch((ia, da.index(ea)), (ib, db.index(eb))))
    return SewingPattern(tuple(panels), tuple(placements), tuple(stitches))


def seam_ratios(pattern: SewingPattern) -> list[float]:
    """Length ratio of every seam; many-to-one seams compare the host to the partner sum."""
    return [pattern.edge_length(host) / sum(pattern.edge_length(r) for r in group)
            for host, group in seam_groups(pattern)]


def _family_weights(family_mix: Mapping[str, float] | None) -> tuple[list[str], np.ndarray]:
    if family_mix is None:
        family_mix = {f: 1.0 for f in FAMILIES}
    unknown = set(family_mix) - set(FAMILIES)
    if unknown:
        raise ValueError(f"unknown garment families: {sorted(unknown)}")
    names = [f for f in FAMILIES if f in family_mix]
    w = np.array([float(family_mix[f]) for f in names])
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("family weights must be nonnegative and not all zero")
    return names, w / w.sum()


def generate_pattern(seed: int, index: int, family_mix: Mapping[str, float] | None = None) -> tuple[str, SewingPattern]:
    """One pattern from the per-pattern seed derived from ``(seed, index)``."""
    names, w = _family_weights(family_mix)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))
    family = names[int(rng.choice(len(names), p=w))]
    for _ in range(100):
        body = rng.uniform(0.9, 1.1)
        drafts, stitches = DRAFTERS[family](rng, body)
        try:
            pattern = check_pattern(assemble(drafts, stitches))
        except PatternError:
            continue
        lo, hi = SEAM_RATIO_RANGE
        if all(lo <= r <= hi for r in seam_ratios(pattern)):
            return family, pattern
    raise RuntimeError(f"could not draft a valid {family} pattern for seed {seed}, index {index}")


def generate_corpus(seed: int, count: int, family_mix: Mapping[str, float] | None = None,
                    return_families: bool = False):
    """Deterministic corpus of ``count`` patterns drawn from the family mix."""
    if count <= 0:
        raise ValueError("count must be positive")
    _family_weights(family_mix)
    out = [generate_pattern(seed, i, family_mix) for i in range(count)]
    if return_families:
        return [p for _, p in out], [f for f, _ in out]
    return [p for _, p in out]
