"""Pattern comparison metrics: panel IoU, placement errors, count accuracies, stitch P/R/F1."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .pattern import Panel, SewingPattern

IOU_RES = 1024
CORRECT_IOU = 0.5
TIE_BREAK = 1e-6


def _fill(poly: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Even-odd scanline fill of ``poly`` at pixel centres ``xs`` x ``ys``; returns (len(ys), len(xs)) bool."""
    a = poly
    b = np.roll(poly, -1, axis=0)
    lo = np.minimum(a[:, 1], b[:, 1])
    hi = np.maximum(a[:, 1], b[:, 1])
    # rows whose centre y lies in [lo, hi) of each edge
    r0 = np.searchsorted(ys, lo, side="left")
    r1 = np.searchsorted(ys, hi, side="left")
    counts = np.zeros((len(ys), len(xs) + 1), dtype=np.int32)
    for k in np.nonzero(r1 > r0)[0]:
        rows = np.arange(r0[k], r1[k])
        y = ys[rows]
        t = (y - a[k, 1]) / (b[k, 1] - a[k, 1])
        x = a[k, 0] + t * (b[k, 0] - a[k, 0])
        cols = np.searchsorted(xs, x, side="left")
        np.add.at(counts, (rows, cols), 1)
    return (np.cumsum(counts[:, :-1], axis=1) % 2).astype(bool)


def panel_cm(panel: Panel) -> np.ndarray:
    return panel.polyline * panel.scale


def polygon_iou(pa: np.ndarray, pb: np.ndarray, res: int = IOU_RES) -> float:
    """Raster IoU of two polygons over their joint bounding box at ``res`` x ``res``."""
    pa = np.asarray(pa, dtype=float)
    pb = np.asarray(pb, dtype=float)
    lo = np.minimum(pa.min(0), pb.min(0))
    hi = np.maximum(pa.max(0), pb.max(0))
    if np.any(hi - lo <= 0):
        raise ValueError("zero-area polygon")
    xs = lo[0] + (np.arange(res) + 0.5) * (hi[0] - lo[0]) / res
    ys = lo[1] + (np.arange(res) + 0.5) * (hi[1] - lo[1]) / res
    A = _fill(pa, xs, ys)
    B = _fill(pb, xs, ys)
    if not A.any() or not B.any():
        raise ValueError("zero-area polygon")
    return float((A & B).sum() / (A | B).sum())


def panel_iou(a: Panel, b: Panel, res: int = IOU_RES) -> float:
    """IoU of two panels in their (cm-scaled) panel frames."""
    pa, pb = panel_cm(a), panel_cm(b)
    la, ha = pa.min(0), pa.max(0)
    lb, hb = pb.min(0), pb.max(0)
    if np.any(ha < lb) or np.any(hb < la):
        if abs(a.signed_area()) == 0 or abs(b.signed_area()) == 0:
            raise ValueError("zero-area polygon")
        return 0.0
    return polygon_iou(pa, pb, res)


def iou_matrix(pred: SewingPattern, truth: SewingPattern, res: int = IOU_RES) -> np.ndarray:
    return np.array([[panel_iou(p, t, res) for t in truth.panels] for p in pred.panels]).reshape(
        pred.n_panels, truth.n_panels)


def match_panels(pred: SewingPattern, truth: SewingPattern, ious: np.ndarray | None = None):
    """Maximum-IoU assignment. Returns ``(pairs, ious)`` with pairs as (pred, truth) indices."""
    if ious is None:
        ious = iou_matrix(pred, truth)
    if ious.size == 0:
        return [], ious
    # same-shape panels (front/back) tie exactly on IoU; break ties by placement distance
    T = np.linalg.norm(np.array([p.T for p in pred.placements])[:, None]
                       - np.array([t.T for t in truth.placements])[None], axis=-1)
    r, c = linear_sum_assignment(-ious + TIE_BREAK * np.tanh(T / 100.0))
    pairs = sorted(zip(r.tolist(), c.tolist()), key=lambda rc: rc[1])
    return pairs, ious


def match_edges(a: Panel, b: Panel) -> dict[int, int]:
    """Edge correspondence between two panels by midpoint distance (cm)."""
    ma = np.array([e.point_at(0.5) for e in a.edges]) * a.scale
    mb = np.array([e.point_at(0.5) for e in b.edges]) * b.scale
    cost = np.linalg.norm(ma[:, None] - mb[None], axis=-1)
    r, c = linear_sum_assignment(cost)
    return dict(zip(r.tolist(), c.tolist()))


def quat_distance(q1, q2) -> float:
    q1, q2 = np.asarray(q1, dtype=float), np.asarray(q2, dtype=float)
    return float(min(np.linalg.norm(q1 - q2), np.linalg.norm(q1 + q2)))


def placement_errors(pred: SewingPattern, truth: SewingPattern, pairs) -> tuple[float, float]:
    """Mean translation distance (cm) and sign-invariant quaternion distance over matched pairs."""
    if not pairs:
        return 0.0, 0.0
    t = [np.linalg.norm(np.subtract(pred.placements[i].T, truth.placements[j].T)) for i, j in pairs]
    r = [quat_distance(pred.placements[i].R, truth.placements[j].R) for i, j in pairs]
    return float(np.mean(t)), float(np.mean(r))


def stitch_counts(pred: SewingPattern, truth: SewingPattern, pairs) -> tuple[int, int, int]:
    """(correct, predicted, true) stitch counts after mapping edges through the matching."""
    pmap = dict(pairs)
    emaps = {i: match_edges(pred.panels[i], truth.panels[j]) for i, j in pairs}
    true = {frozenset(s) for s in truth.stitches}
    correct = 0
    for s in pred.stitches:
        try:
            mapped = frozenset((pmap[pi], emaps[pi][ei]) for pi, ei in s)
        except KeyError:
            continue
        correct += len(mapped) == 2 and mapped in true
    return correct, len(pred.stitches), len(truth.stitches)


def prf(correct: int, predicted: int, true: int) -> tuple[float, float, float]:
    precision = correct / predicted if predicted else (1.0 if not true else 0.0)
    recall = correct / true if true else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def stitch_prf(pred: SewingPattern, truth: SewingPattern, pairs) -> tuple[float, float, float]:
    return prf(*stitch_counts(pred, truth, pairs))


@dataclass
class PatternScore:
    name: str
    n_pred: int
    n_true: int
    pairs: list
    ious: list
    trans_l2: float
    rot_l2: float
    edge_ok: list
    stitches: tuple


@dataclass
class MetricReport:
    panel_iou: float
    panel_iou_penalized: float
    trans_l2: float
    rot_l2: float
    panel_accuracy: float
    edge_accuracy: float
    precision: float
    recall: float
    f1: float
    n_patterns: int
    per_pattern: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def table(self) -> str:
        cols = [("Panel IoU", self.panel_iou), ("IoU (penalized)", self.panel_iou_penalized),
                ("Trans L2 (cm)", self.trans_l2), ("Rot L2", self.rot_l2), ("#Panel", self.panel_accuracy),
                ("#Edge", self.edge_accuracy), ("Precision", self.precision), ("Recall", self.recall),
                ("F1", self.f1)]
        w = max(len(c) for c, _ in cols)
        head = " | ".join(c.rjust(max(w, 9)) for c, _ in cols)
        vals = " | ".join(f"{v:.4f}".rjust(max(w, 9)) for _, v in cols)
        return f"{head}\n{'-' * len(head)}\n{vals}\n"


def score_pattern(pred: SewingPattern, truth: SewingPattern, name: str = "") -> PatternScore:
    pairs, ious = match_panels(pred, truth)
    matched = [float(ious[i, j]) for i, j in pairs]
    t, r = placement_errors(pred, truth, pairs)
    edge_ok = [pred.panels[i].n_edges == truth.panels[j].n_edges for (i, j), v in zip(pairs, matched)
               if v > CORRECT_IOU]
    return PatternScore(name, pred.n_panels, truth.n_panels, [list(p) for p in pairs], matched, t, r, edge_ok,
                        stitch_counts(pred, truth, pairs))


def evaluate(preds, truths, names=None) -> MetricReport:
    """Aggregate metrics over paired pattern lists (stitch counts are micro-averaged)."""
    preds, truths = list(preds), list(truths)
    if len(preds) != len(truths):
        raise ValueError("prediction and truth lists differ in length")
    names = names or [str(k) for k in range(len(preds))]
    scores = [score_pattern(p, t, n) for p, t, n in zip(preds, truths, names)]
    ious = [v for s in scores for v in s.ious]
    denom = sum(max(s.n_pred, s.n_true) for s in scores)
    pairs_t = [s.trans_l2 for s in scores for _ in s.pairs]
    pairs_r = [s.rot_l2 for s in scores for _ in s.pairs]
    edge_ok = [v for s in scores for v in s.edge_ok]
    c, p, t = (sum(s.stitches[k] for s in scores) for k in range(3))
    precision, recall, f1 = prf(c, p, t)
    return MetricReport(
        panel_iou=float(np.mean(ious)) if ious else 0.0,
        panel_iou_penalized=float(sum(ious) / denom) if denom else 0.0,
        trans_l2=float(np.mean(pairs_t)) if pairs_t else 0.0,
        rot_l2=float(np.mean(pairs_r)) if pairs_r else 0.0,
        panel_accuracy=float(np.mean([s.n_pred == s.n_true for s in scores])) if scores else 0.0,
        edge_accuracy=float(np.mean(edge_ok)) if edge_ok else 0.0,
        precision=precision, recall=recall, f1=f1, n_patterns=len(scores),
        per_pattern=[asdict(s) for s in scores],
    )
