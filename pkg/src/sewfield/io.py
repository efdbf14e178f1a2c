"""JSON (de)serialization of sewing patterns and SVG export."""
from __future__ import annotations

import json
from pathlib import Path

import jsonschema
import numpy as np

from .pattern import Edge, Panel, PatternError, Placement, SewingPattern, Stitch, check_pattern

_POINT2 = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_REF = {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2}

PATTERN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["panels", "placements", "stitches"],
    "properties": {
        "panels": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["edges", "scale"],
                "properties": {
                    "edges": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["start", "end", "control"],
                            "properties": {
                                "start": _POINT2,
                                "end": _POINT2,
                                "control": {"oneOf": [_POINT2, {"type": "null"}]},
                            },
                        },
                    },
                    "scale": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "placements": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["T", "R"],
                "properties": {
                    "T": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                    "R": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
                },
            },
        },
        "stitches": {"type": "array", "items": {"type": "array", "items": _REF, "minItems": 2, "maxItems": 2}},
    },
}


class SchemaError(PatternError):
    """A JSON document does not match the pattern schema."""


def _f(v) -> float:
    return float(f"{float(v):.9g}")


def _pts(p):
    return [_f(p[0]), _f(p[1])]


def to_dict(pattern: SewingPattern) -> dict:
    return {
        "panels": [
            {
                "edges": [
                    {"start": _pts(e.start), "end": _pts(e.end), "control": None if e.control is None else _pts(e.control)}
                    for e in p.edges
                ],
                "scale": _f(p.scale),
            }
            for p in pattern.panels
        ],
        "placements": [{"T": [_f(v) for v in pl.T], "R": [_f(v) for v in pl.R]} for pl in pattern.placements],
        "stitches": [[list(s.a), list(s.b)] for s in pattern.stitches],
    }


def serialize(pattern: SewingPattern, indent: int | None = None) -> str:
    return json.dumps(to_dict(pattern), indent=indent)


def from_dict(doc: dict, check: bool = True) -> SewingPattern:
    try:
        jsonschema.validate(doc, PATTERN_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"schema violation at {path}: {exc.message}") from None
    panels = tuple(
        Panel(tuple(Edge(e["start"], e["end"], e["control"]) for e in p["edges"]), p["scale"]) for p in doc["panels"]
    )
    placements = tuple(Placement(tuple(pl["T"]), tuple(pl["R"])) for pl in doc["placements"])
    stitches = tuple(Stitch(tuple(a), tuple(b)) for a, b in doc["stitches"])
    pattern = SewingPattern(panels, placements, stitches)
    if check:
        check_pattern(pattern)
    return pattern


def deserialize(text: str, check: bool = True) -> SewingPattern:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from None
    return from_dict(doc, check=check)


def save_pattern(pattern: SewingPattern, path) -> None:
    Path(path).write_text(serialize(pattern, indent=1))


def load_pattern(path, check: bool = True) -> SewingPattern:
    return deserialize(Path(path).read_text(), check=check)


# ---------------------------------------------------------------- SVG

PALETTE = ["#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6",
           "#bfef45", "#469990", "#9a6324", "#800000", "#808000", "#000075", "#fabed4"]


def _path_d(points) -> str:
    return "M " + " L ".join(f"{x:.3f},{y:.3f}" for x, y in points)


def pattern_svg(pattern: SewingPattern, cell: float = 160.0, columns: int | None = None, extra=None) -> str:
    """Panels laid out on a grid (cm), endpoints circled, stitched edges colour-paired.

    ``extra`` maps panel index to a list of ``(points_cm, colour)`` overlays drawn
    in that panel's cell (used for refit source/target comparisons).
    """
    n = pattern.n_panels
    columns = columns or int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / columns))
    colour = {}
    for k, s in enumerate(pattern.stitches):
        for ref in s:
            colour.setdefault(ref, PALETTE[k % len(PALETTE)])
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{columns * cell:.0f}" height="{rows * cell:.0f}" '
           f'viewBox="0 0 {columns * cell:.0f} {rows * cell:.0f}">']
    for i, panel in enumerate(pattern.panels):
        ox = (i % columns + 0.5) * cell
        oy = (i // columns + 0.5) * cell

        def tf(p, panel=panel, ox=ox, oy=oy):
            p = np.asarray(p) * panel.scale
            return np.stack([ox + p[..., 0], oy - p[..., 1]], axis=-1)

        poly = tf(panel.polyline)
        out.append(f'<path d="{_path_d(poly)} Z" fill="#f4f4f4" stroke="#333" stroke-width="0.6"/>')
        for j, e in enumerate(panel.edges):
            c = colour.get((i, j))
            if c:
                out.append(f'<path d="{_path_d(tf(e.flatten()))}" fill="none" stroke="{c}" stroke-width="2"/>')
        for x, y in tf(panel.endpoints):
            out.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="1.2" fill="#000"/>')
        for pts, col in (extra or {}).get(i, []):
            q = tf(np.asarray(pts) / panel.scale)
            out.append(f'<path d="{_path_d(q)} Z" fill="none" stroke="{col}" stroke-width="0.8"/>')
        out.append(f'<text x="{ox - cell / 2 + 4:.1f}" y="{oy - cell / 2 + 12:.1f}" font-size="10">{i}</text>')
    out.append("</svg>")
    return "\n".join(out)
