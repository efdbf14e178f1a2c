"""Stitch prediction from placed edge geometry, and one-to-one stitch flattening."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted
from torch import nn
from torch.nn import functional as F

from .nn import (
    MLP,
    flush_denormals,
    AttentionPool,
    NetworkConfig,
    TransformerBlock,
    load_checkpoint,
    load_module,
    make_optimizer,
    module_tensors,
    save_checkpoint,
    seeded,
)
from .pattern import PatternError, SewingPattern, Stitch

log = logging.getLogger(__name__)

STITCH_DTYPE = torch.float32
POSITION_SCALE = 100.0  # cm
LOCAL_SCALE = 20.0  # cm
MAX_FLATTEN_ROUNDS = 8


class FlattenError(PatternError):
    """Stitch flattening did not reach a fixpoint (inconsistent prediction)."""


# ---------------------------------------------------------------- edge sampling


def edge_parameters(n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """``n`` stratified arc-length fractions, jittered when ``rng`` is given, else cell centres."""
    off = rng.uniform(0.0, 1.0, n) if rng is not None else np.full(n, 0.5)
    return (np.arange(n) + off) / n


def placed_edge_points(pattern: SewingPattern, n: int = 32, rng=None) -> np.ndarray:
    """(E, n, 3) points along every placed edge, arc-length stratified, in cm."""
    out = []
    for (pi, ei) in pattern.edge_refs():
        edge = pattern.panels[pi].edges[ei]
        fr = edge_parameters(n, rng)
        t = np.array([edge.param_at_fraction(f) for f in fr])
        out.append(pattern.placed_edge_points((pi, ei), t))
    if not out:
        return np.zeros((0, n, 3))
    return np.stack(out)


def stitch_labels(pattern: SewingPattern) -> tuple[np.ndarray, np.ndarray]:
    refs = pattern.edge_refs()
    index = {r: k for k, r in enumerate(refs)}
    pair = np.zeros((len(refs), len(refs)))
    for s in pattern.stitches:
        i, j = index[s.a], index[s.b]
        pair[i, j] = pair[j, i] = 1.0
    return pair.max(axis=1), pair


# ---------------------------------------------------------------- network


class EdgeEncoder(nn.Module):
    """Per-edge point-set encoder followed by self-attention across all edges."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        W = cfg.stitch_width
        self.lift = MLP([6, W, W])
        self.point_block = TransformerBlock(W, cfg.stitch_heads)
        self.pool = AttentionPool(W, cfg.stitch_heads)
        self.summary = MLP([W + 7, W, W])
        self.blocks = nn.ModuleList(TransformerBlock(W, cfg.stitch_heads) for _ in range(cfg.stitch_blocks))

    def forward(self, pts, mask):
        """pts (B, E, N, 3) in cm, mask (B, E) -> descriptors (B, E, W)."""
        B, E, N, _ = pts.shape
        c = pts.mean(dim=2, keepdim=True)
        feats = torch.cat([pts / POSITION_SCALE, (pts - c) / LOCAL_SCALE], dim=-1).reshape(B * E, N, 6)
        h = self.point_block(self.lift(feats))
        h = self.pool(h).reshape(B, E, -1)
        seg = pts[:, :, 1:] - pts[:, :, :-1]
        length = seg.norm(dim=-1).sum(-1, keepdim=True)
        chord = pts[:, :, -1] - pts[:, :, 0]
        chord = chord / chord.norm(dim=-1, keepdim=True).clamp_min(1e-9)
        h = self.summary(torch.cat([h, c[:, :, 0] / POSITION_SCALE, length / POSITION_SCALE, chord], dim=-1))
        h = h * mask[..., None]
        for blk in self.blocks:
            h = blk(h, mask)
        return h


class PairHead(nn.Module):
    """Sew logit per edge and bilinear complementarity ``Gp(f_i)^T A Gd(f_j)``."""

    def __init__(self, width: int):
        super().__init__()
        self.sew = MLP([width, width, 1])
        self.primal = nn.Linear(width, width)
        self.dual = nn.Linear(width, width)
        self.A = nn.Parameter(torch.eye(width, dtype=STITCH_DTYPE) / np.sqrt(width))

    def forward(self, f):
        sew = self.sew(f)[..., 0]
        pair = complementarity(self.primal(f), self.A, self.dual(f))
        return sew, pair


def complementarity(gp, A, gd):
    """Logits ``f_c[i, j] = gp_i^T A gd_j`` over the last two token axes."""
    return gp @ A @ gd.transpose(-1, -2)


@dataclass
class StitchPrediction:
    refs: list
    sew_prob: np.ndarray
    pair_prob: np.ndarray
    stitches: list = field(default_factory=list)

    def to_dict(self) -> dict:
        pairs = []
        E = len(self.refs)
        for i in range(E):
            for j in range(i + 1, E):
                if self.pair_prob[i, j] > 0.05:
                    pairs.append({"a": list(self.refs[i]), "b": list(self.refs[j]), "score": float(self.pair_prob[i, j])})
        return {
            "edges": [{"ref": list(r), "sew_prob": float(p)} for r, p in zip(self.refs, self.sew_prob)],
            "pairs": pairs,
            "stitches": [[list(s.a), list(s.b)] for s in self.stitches],
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def resolve_pairs(refs, sew_prob, pair_prob, threshold: float = 0.5) -> list[Stitch]:
    """All pairs with both edges sew-classified and symmetric score above ``threshold``."""
    out = []
    E = len(refs)
    for i in range(E):
        if sew_prob[i] <= threshold:
            continue
        for j in range(i + 1, E):
            if sew_prob[j] > threshold and pair_prob[i, j] > threshold:
                out.append(Stitch(refs[i], refs[j]))
    return out


def _scalar(x) -> float:
    return x.item() if isinstance(x, torch.Tensor) else float(x)


class StitchPredictor(BaseEstimator):
    def __init__(self, config: NetworkConfig | None = None, log_path=None, verbose: bool = False):
        self.config = config
        self.log_path = log_path
        self.verbose = verbose

    @property
    def cfg(self) -> NetworkConfig:
        return self.config or NetworkConfig()

    def _build(self):
        with seeded(self.cfg.seed):
            self.encoder_ = EdgeEncoder(self.cfg).to(STITCH_DTYPE)
            self.head_ = PairHead(self.cfg.stitch_width).to(STITCH_DTYPE)

    def parameters(self):
        return list(self.encoder_.parameters()) + list(self.head_.parameters())

    def _forward(self, pts, mask):
        f = self.encoder_(pts, mask)
        return f, *self.head_(f)

    @staticmethod
    def _pad(batch):
        E = max(len(b) for b in batch)
        N = batch[0].shape[1]
        pts = np.zeros((len(batch), E, N, 3))
        mask = np.zeros((len(batch), E), dtype=bool)
        for k, b in enumerate(batch):
            pts[k, :len(b)] = b
            mask[k, :len(b)] = True
        return torch.as_tensor(pts, dtype=STITCH_DTYPE), torch.as_tensor(mask)

    def sample_pairs(self, pair_label: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
        """Ordered positive pairs plus at most ``neg_ratio`` times as many negatives."""
        E = len(pair_label)
        off = ~np.eye(E, dtype=bool)
        pos = np.argwhere((pair_label > 0) & off)
        neg = np.argwhere((pair_label == 0) & off)
        k = min(len(neg), self.cfg.neg_ratio * max(len(pos), 1))
        if k < len(neg):
            neg = neg[rng.choice(len(neg), size=k, replace=False)]
        return pos, neg

    def fit(self, patterns, y=None):
        with flush_denormals():
            return self._fit(patterns)

    def _fit(self, patterns):
        patterns = list(patterns)
        if not patterns:
            raise ValueError("empty stitch corpus")
        cfg = self.cfg
        self._build()
        rng = np.random.default_rng(cfg.seed)
        labels = [stitch_labels(p) for p in patterns]
        params = self.parameters()
        opt, sched = make_optimizer(params, cfg.stitch_lr, cfg.stitch_steps, cfg.weight_decay, cfg.warmup_frac)
        history, t0 = [], time.time()
        for step in range(cfg.stitch_steps):
            idx = rng.choice(len(patterns), size=min(cfg.stitch_batch, len(patterns)), replace=False)
            pts, mask = self._pad([placed_edge_points(patterns[i], cfg.stitch_points, rng) for i in idx])
            _, sew, pair = self._forward(pts, mask)
            l_sew = l_pair = 0.0
            n_neg = n_pos = 0
            for b, i in enumerate(idx):
                sew_lab, pair_lab = labels[i]
                E = len(sew_lab)
                l_sew = l_sew + F.binary_cross_entropy_with_logits(
                    sew[b, :E], torch.as_tensor(sew_lab, dtype=STITCH_DTYPE), reduction="mean")
                pos, neg = self.sample_pairs(pair_lab, rng)
                sel = np.concatenate([pos, neg])
                if len(sel):
                    logits = pair[b, sel[:, 0], sel[:, 1]]
                    target = torch.as_tensor(np.r_[np.ones(len(pos)), np.zeros(len(neg))], dtype=STITCH_DTYPE)
                    l_pair = l_pair + F.binary_cross_entropy_with_logits(logits, target, reduction="mean")
                n_pos += len(pos)
                n_neg += len(neg)
            loss = (l_sew + l_pair) / len(idx)
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite stitch loss at step {step}")
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, 10.0)
            opt.step()
            sched.step()
            history.append({"step": step, "loss": loss.item(), "l_sew": _scalar(l_sew) / len(idx),
                            "l_pair": _scalar(l_pair) / len(idx), "positives": n_pos, "negatives": n_neg})
            if self.verbose and step % 100 == 0:
                log.info("stitch step %d loss %.4f (%.0fs)", step, loss.item(), time.time() - t0)
        self.history_ = history
        if self.log_path:
            cols = ["step", "loss", "l_sew", "l_pair", "positives", "negatives"]
            with open(self.log_path, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=cols)
                w.writeheader()
                w.writerows(history)
        return self

    # ------------------------------------------------------------ inference

    def embed_edges(self, pattern: SewingPattern) -> np.ndarray:
        """(E, W) descriptors in ``pattern.edge_refs()`` order."""
        check_is_fitted(self, "encoder_")
        refs = pattern.edge_refs()
        if len(refs) < 2:
            raise PatternError("stitch embedding needs at least two edges")
        pts, mask = self._pad([placed_edge_points(pattern, self.cfg.stitch_points)])
        with torch.no_grad():
            return self.encoder_(pts, mask)[0].numpy()

    def classify_and_pair(self, descriptors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Sew probabilities (E,) and symmetrized pair probabilities (E, E)."""
        check_is_fitted(self, "head_")
        f = torch.as_tensor(np.asarray(descriptors), dtype=STITCH_DTYPE)
        with torch.no_grad():
            sew, pair = self.head_(f)
        s = torch.sigmoid(pair).numpy().astype(float)
        return torch.sigmoid(sew).numpy().astype(float), 0.5 * (s + s.T)

    def predict_proba(self, pattern: SewingPattern) -> StitchPrediction:
        refs = pattern.edge_refs()
        if len(refs) < 2:
            check_is_fitted(self, "head_")
            pts, mask = self._pad([placed_edge_points(pattern, self.cfg.stitch_points)]) if refs else (None, None)
            sew = np.zeros(len(refs))
            if refs:
                with torch.no_grad():
                    sew = torch.sigmoid(self._forward(pts, mask)[1][0]).numpy().astype(float)
            return StitchPrediction(refs, sew, np.zeros((len(refs), len(refs))), [])
        sew, pair = self.classify_and_pair(self.embed_edges(pattern))
        return StitchPrediction(refs, sew, pair, resolve_pairs(refs, sew, pair))

    def predict(self, pattern: SewingPattern) -> list[Stitch]:
        return self.predict_proba(pattern).stitches

    def transform(self, pattern: SewingPattern) -> SewingPattern:
        """Pattern with its stitches replaced by the prediction."""
        return pattern.replace(stitches=tuple(self.predict(pattern)))

    # ------------------------------------------------------------ persistence

    def save(self, path, meta: dict | None = None) -> None:
        check_is_fitted(self, "encoder_")
        tensors = {**module_tensors(self.encoder_, "encoder."), **module_tensors(self.head_, "head.")}
        save_checkpoint(path, tensors, self.cfg.to_dict(), {"kind": "stitch", **(meta or {})})

    @classmethod
    def load(cls, path) -> "StitchPredictor":
        tensors, config, meta = load_checkpoint(path)
        if meta.get("kind") != "stitch":
            raise ValueError(f"{path} is not a stitch checkpoint")
        model = cls(NetworkConfig.from_dict(config))
        model._build()
        load_module(model.encoder_, {k: v.to(STITCH_DTYPE) for k, v in tensors.items()}, "encoder.")
        load_module(model.head_, {k: v.to(STITCH_DTYPE) for k, v in tensors.items()}, "head.")
        return model


# ---------------------------------------------------------------- flattening


def _host_params(pattern: SewingPattern, host, partners) -> list[float]:
    """Position of each partner's midpoint along the host edge (0..1, by nearest sample)."""
    t = np.linspace(0.0, 1.0, 129)
    curve = pattern.placed_edge_points(host, t)
    out = []
    for p in partners:
        mid = pattern.placed_edge_points(p, np.array([0.5]))[0]
        out.append(float(t[np.argmin(np.linalg.norm(curve - mid, axis=1))]))
    return out


def _split_edge(pattern: SewingPattern, host, fractions):
    """Split ``host`` at cumulative arc-length ``fractions``; returns the new pattern and sub-edge refs."""
    pi, ei = host
    panel = pattern.panels[pi]
    edge = panel.edges[ei]
    pieces, rest, done = [], edge, 0.0
    for f in fractions:
        local = (f - done) / (1.0 - done)
        a, rest = rest.split(rest.param_at_fraction(local))
        pieces.append(a)
        done = f
    pieces.append(rest)
    k = len(pieces)
    edges = panel.edges[:ei] + tuple(pieces) + panel.edges[ei + 1:]
    new_panel = type(panel)(edges, panel.scale)

    def remap(ref):
        if ref[0] != pi or ref[1] < ei:
            return ref
        if ref[1] > ei:
            return (pi, ref[1] + k - 1)
        raise AssertionError("host edge reference must be rewritten explicitly")

    subs = [(pi, ei + j) for j in range(k)]
    panels = pattern.panels[:pi] + (new_panel,) + pattern.panels[pi + 1:]
    return panels, subs, remap


def flatten_stitches(pattern: SewingPattern, stitches=None, max_rounds: int = MAX_FLATTEN_ROUNDS) -> SewingPattern:
    """Split edges with several partners so that every edge has at most one stitch.

    A host edge matched to ``e_1..e_k`` (ordered by where their midpoints
    project onto the host) is cut at the cumulative length fractions
    ``|e_1| / sum|e_j|, ...``; each piece is stitched to one partner.  Passes
    repeat until no edge has more than one partner.
    """
    if stitches is not None:
        pattern = pattern.replace(stitches=tuple(stitches))
    for _ in range(max_rounds):
        mult = pattern.stitch_multiplicity()
        hosts = sorted([r for r, m in mult.items() if m > 1], key=lambda r: (-mult[r], r))
        if not hosts:
            return pattern
        while hosts:
            host = hosts.pop(0)
            partners = pattern.partners().get(host, [])
            if len(partners) < 2:
                continue
            pos = _host_params(pattern, host, partners)
            order = sorted(range(len(partners)), key=lambda k: (pos[k], partners[k]))
            partners = [partners[k] for k in order]
            lens = np.array([pattern.edge_length(p) for p in partners])
            fr = np.cumsum(lens)[:-1] / lens.sum()
            panels, subs, remap = _split_edge(pattern, host, fr)
            new_stitches = []
            for s in pattern.stitches:
                if host in (s.a, s.b):
                    continue
                new_stitches.append(Stitch(remap(s.a), remap(s.b)))
            for sub, p in zip(subs, partners):
                new_stitches.append(Stitch(sub, remap(p) if p != host else p))
            pattern = SewingPattern(panels, pattern.placements, tuple(new_stitches))
            hosts = [remap(h) for h in hosts]
    if max(pattern.stitch_multiplicity().values(), default=0) > 1:
        raise FlattenError(f"stitch flattening did not converge in {max_rounds} rounds")
    return pattern
