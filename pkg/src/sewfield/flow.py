"""Set-token flow matching over whole patterns.

Each panel becomes one token ``[z, T, R, s]`` (latent code, translation in
cm, unit quaternion, log scale).  A pattern is a fixed ``N_MAX``-row token
matrix with all-zero rows for absent panels.  The velocity network has no
positional pathway over panel tokens, so it is permutation equivariant.
"""
from __future__ import annotations

import csv
import logging
import time

import numpy as np
import torch
from matplotlib.path import Path as MplPath
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted
from torch import nn

from .meshing import mesh_panel
from .nn import (
    MLP,
    flush_denormals,
    MultiHeadAttention,
    NetworkConfig,
    load_checkpoint,
    load_module,
    make_optimizer,
    modulate,
    module_tensors,
    save_checkpoint,
    seeded,
    timestep_embedding,
)
from .pattern import N_MAX, Placement, PatternError, SewingPattern, canonical_quat

log = logging.getLogger(__name__)

# the velocity net trains in single precision; geometry stays in float64
FLOW_DTYPE = torch.float32
PLACEMENT_WIDTH = 8  # T (3) + R (4) + log scale (1)
RASTER_X = (-90.0, 90.0)
RASTER_Y = (-5.0, 175.0)


class EmptyPatternError(PatternError):
    pass


# ---------------------------------------------------------------- tokens


def tokenize(pattern: SewingPattern, vae, n_rows: int = N_MAX, seed: int = 0) -> np.ndarray:
    """``(n_rows, D + 8)`` raw token matrix; row i is panel i, trailing rows zero."""
    if pattern.n_panels > n_rows:
        raise PatternError(f"pattern has {pattern.n_panels} panels, token set holds {n_rows}")
    D = vae.cfg.latent_dim
    out = np.zeros((n_rows, D + PLACEMENT_WIDTH))
    if pattern.n_panels == 0:
        return out
    Z = vae.transform(pattern.panels, seed=seed)
    for i, (panel, pl) in enumerate(zip(pattern.panels, pattern.placements)):
        out[i, :D] = Z[i]
        out[i, D:D + 3] = pl.T
        out[i, D + 3:D + 7] = canonical_quat(pl.R)
        out[i, D + 7] = np.log(panel.scale)
    return out


def split_token(row: np.ndarray, latent_dim: int):
    z = row[:latent_dim]
    T = row[latent_dim:latent_dim + 3]
    R = row[latent_dim + 3:latent_dim + 7]
    s = row[latent_dim + 7]
    return z, T, R, s


class TokenScaler:
    """Per-channel scale-only normalization (zero rows stay zero)."""

    def fit(self, X: np.ndarray, mask: np.ndarray | None = None):
        X = np.asarray(X, dtype=float)
        rows = X.reshape(-1, X.shape[-1])
        if mask is None:
            mask = np.abs(rows).sum(-1) > 0
        real = rows[np.asarray(mask).reshape(-1)]
        if len(real) == 0:
            raise ValueError("no real rows to fit the token scaler")
        self.scale_ = np.maximum(np.sqrt((real**2).mean(0)), 1e-6)
        return self

    def transform(self, X):
        return np.asarray(X, dtype=float) / self.scale_

    def inverse_transform(self, X):
        return np.asarray(X, dtype=float) * self.scale_


def detokenize(tokens: np.ndarray, vae, scaler: TokenScaler, tau: float, grid_n: int = 128) -> SewingPattern:
    """Rows with normalized norm above ``tau`` become placed panels (no stitches)."""
    tokens = np.asarray(tokens, dtype=float)
    D = vae.cfg.latent_dim
    norms = np.linalg.norm(scaler.transform(tokens), axis=-1)
    rows = tokens[norms > tau]
    if len(rows) == 0:
        raise EmptyPatternError("token set decodes to an empty pattern")
    panels, placements = [], []
    for row in rows:
        z, T, R, s = split_token(row, D)
        nr = np.linalg.norm(R)
        if not np.isfinite(nr) or nr < 1e-8:
            raise PatternError("degenerate rotation in token")
        panels.append(mesh_panel(z, vae, grid_n=grid_n, scale=float(np.exp(s))).panel)
        placements.append(Placement(tuple(T), canonical_quat(R / nr)))
    return SewingPattern(tuple(panels), tuple(placements), ())


def split_norm_threshold(norms: np.ndarray) -> float:
    """Two-cluster split of row norms, then midpoint of padding p99 and real p1."""
    norms = np.sort(np.asarray(norms, dtype=float).ravel())
    if len(norms) < 2:
        raise ValueError("need at least two row norms")
    # 1D 2-means by exhaustive split (Otsu on sorted values)
    best, cut = np.inf, 1
    csum = np.cumsum(norms)
    csq = np.cumsum(norms**2)
    n = len(norms)
    for k in range(1, n):
        lo = csq[k - 1] - csum[k - 1] ** 2 / k
        hi = (csq[-1] - csq[k - 1]) - (csum[-1] - csum[k - 1]) ** 2 / (n - k)
        if lo + hi < best:
            best, cut = lo + hi, k
    pad, real = norms[:cut], norms[cut:]
    return 0.5 * (np.percentile(pad, 99) + np.percentile(real, 1))


# ---------------------------------------------------------------- raster condition


def rasterize_pattern(pattern: SewingPattern | None, size: int = 64, supersample: int = 4) -> np.ndarray:
    """Front-view (XY) silhouette of the placed panels, antialiased, rows top to bottom."""
    n = size * supersample
    if pattern is None or pattern.n_panels == 0:
        return np.zeros((size, size))
    xs = RASTER_X[0] + (np.arange(n) + 0.5) * (RASTER_X[1] - RASTER_X[0]) / n
    ys = RASTER_Y[1] - (np.arange(n) + 0.5) * (RASTER_Y[1] - RASTER_Y[0]) / n
    P = np.stack(np.meshgrid(xs, ys, indexing="xy"), axis=-1).reshape(-1, 2)
    fill = np.zeros(len(P), dtype=bool)
    for panel, pl in zip(pattern.panels, pattern.placements):
        poly = pl.apply(panel.polyline, panel.scale)[:, :2]
        lo, hi = poly.min(0), poly.max(0)
        box = (P[:, 0] >= lo[0]) & (P[:, 0] <= hi[0]) & (P[:, 1] >= lo[1]) & (P[:, 1] <= hi[1]) & ~fill
        if box.any():
            fill[box] |= MplPath(poly).contains_points(P[box])
    return fill.reshape(size, supersample, size, supersample).mean(axis=(1, 3))


def raster_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Soft IoU of two rasters in [0, 1]: sum(min) / sum(max)."""
    den = np.maximum(a, b).sum()
    return float(np.minimum(a, b).sum() / den) if den > 0 else 1.0


def patchify(raster: torch.Tensor, patch: int) -> torch.Tensor:
    B, H, W = raster.shape
    p = raster.reshape(B, H // patch, patch, W // patch, patch).permute(0, 1, 3, 2, 4)
    return p.reshape(B, (H // patch) * (W // patch), patch * patch)


# ---------------------------------------------------------------- velocity network


class DiTBlock(nn.Module):
    """Self-attention + MLP with adaptive LayerNorm from the time embedding.

    With ``cross=True`` a cross-attention sublayer reads a context token set.
    """

    def __init__(self, width: int, heads: int, cross: bool = False):
        super().__init__()
        self.norm1 = nn.LayerNorm(width, elementwise_affine=False)
        self.attn = MultiHeadAttention(width, heads)
        self.norm2 = nn.LayerNorm(width, elementwise_affine=False)
        self.mlp = MLP([width, 4 * width, width])
        self.ada = nn.Linear(width, 6 * width)
        nn.init.zeros_(self.ada.weight)
        nn.init.zeros_(self.ada.bias)
        self.cross = None
        if cross:
            self.norm_c = nn.LayerNorm(width)
            self.cross = MultiHeadAttention(width, heads)

    def forward(self, x, c, context=None):
        s1, g1, b1, s2, g2, b2 = self.ada(nn.functional.silu(c)).chunk(6, dim=-1)
        x = x + g1[:, None] * self.attn(modulate(self.norm1(x), b1, s1))
        if self.cross is not None and context is not None:
            x = x + self.cross(self.norm_c(x), context)
        x = x + g2[:, None] * self.mlp(modulate(self.norm2(x), b2, s2))
        return x


class VelocityNet(nn.Module):
    def __init__(self, token_width: int, cfg: NetworkConfig, conditional: bool = False):
        super().__init__()
        W = cfg.flow_width
        self.conditional = conditional
        self.inp = nn.Linear(token_width, W)
        self.t_embed = MLP([W, W, W])
        self.blocks = nn.ModuleList(DiTBlock(W, cfg.flow_heads, cross=conditional) for _ in range(cfg.flow_blocks))
        self.norm = nn.LayerNorm(W, elementwise_affine=False)
        self.ada = nn.Linear(W, 2 * W)
        self.out = nn.Linear(W, token_width)
        for layer in (self.ada, self.out):
            nn.init.zeros_(layer.weight)
            nn.init.zeros_(layer.bias)
        if conditional:
            n_patch = (cfg.raster_size // cfg.patch_size) ** 2
            self.patch = cfg.patch_size
            self.lift = nn.Linear(cfg.patch_size**2, W)
            # learned positions for pixel tokens only; panel tokens stay position-free
            self.pix_pos = nn.Parameter(torch.randn(1, n_patch, W, dtype=FLOW_DTYPE) * 0.02)
            self.semantic = MLP([W, W, W])

    def condition_tokens(self, raster):
        pix = self.lift(patchify(raster, self.patch))
        sem = self.semantic(pix.mean(dim=1, keepdim=True))
        return pix + self.pix_pos, sem

    def forward(self, x, t, raster=None, cond=None):
        W = self.inp.out_features
        c = self.t_embed(timestep_embedding(t, W))
        h = self.inp(x)
        n = x.shape[1]
        sem = None
        if self.conditional:
            if cond is None:
                if raster is None:
                    raise ValueError("conditional velocity net needs a raster")
                cond = self.condition_tokens(raster)
            pix, sem = cond
            h = torch.cat([h, pix], dim=1)
        for blk in self.blocks:
            h = blk(h, c, sem)
        shift, scale = self.ada(nn.functional.silu(c)).chunk(2, dim=-1)
        return self.out(modulate(self.norm(h[:, :n]), shift, scale))


# ---------------------------------------------------------------- estimator


class PatternFlow(BaseEstimator):
    """Flow-matching generator over token sets of shape (rows, width).

    Linear path ``X_t = (1 - t) X_0 + t X_1`` with target velocity
    ``X_1 - X_0``; sampling integrates the learned velocity with Euler steps.
    """

    def __init__(self, config: NetworkConfig | None = None, conditional: bool = False, log_path=None,
                 verbose: bool = False):
        self.config = config
        self.conditional = conditional
        self.log_path = log_path
        self.verbose = verbose

    @property
    def cfg(self) -> NetworkConfig:
        return self.config or NetworkConfig()

    def _build(self, n_rows: int, width: int):
        self.n_rows_, self.width_ = n_rows, width
        with seeded(self.cfg.seed):
            self.net_ = VelocityNet(width, self.cfg, self.conditional).to(FLOW_DTYPE)

    def fit(self, X, conditions=None, mask=None):
        """Train on raw token sets ``X`` (M, rows, width); ``conditions`` are rasters (M, H, W)."""
        with flush_denormals():
            return self._fit(X, conditions, mask)

    def _fit(self, X, conditions=None, mask=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 3 or len(X) == 0:
            raise ValueError("expected a nonempty (M, rows, width) token corpus")
        if self.conditional and (conditions is None or len(conditions) != len(X)):
            raise ValueError("conditional flow needs one raster per token set")
        cfg = self.cfg
        self.scaler_ = TokenScaler().fit(X, mask)
        Xn = torch.as_tensor(self.scaler_.transform(X), dtype=FLOW_DTYPE)
        C = torch.as_tensor(np.asarray(conditions, dtype=float), dtype=FLOW_DTYPE) if self.conditional else None
        self._build(X.shape[1], X.shape[2])
        self.tau_ = None
        opt, sched = make_optimizer(self.net_.parameters(), cfg.flow_lr, cfg.flow_steps, cfg.weight_decay,
                                    cfg.warmup_frac)
        gen = torch.Generator().manual_seed(cfg.seed)
        history = []
        t0 = time.time()
        for step in range(cfg.flow_steps):
            idx = torch.randint(len(Xn), (min(cfg.flow_batch, len(Xn)),), generator=gen)
            X1 = Xn[idx]
            X0 = torch.randn(X1.shape, generator=gen, dtype=FLOW_DTYPE)
            t = torch.rand(len(idx), generator=gen, dtype=FLOW_DTYPE)
            Xt = interpolate(X0, X1, t)
            pred = self.net_(Xt, t, C[idx] if C is not None else None)
            loss = ((pred - (X1 - X0)) ** 2).mean()
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite flow loss at step {step}")
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(self.net_.parameters(), 10.0)
            opt.step()
            sched.step()
            history.append({"step": step, "loss": loss.item()})
            if self.verbose and step % 200 == 0:
                log.info("flow step %d loss %.4f (%.0fs)", step, loss.item(), time.time() - t0)
        self.history_ = history
        if self.log_path:
            with open(self.log_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["step", "loss"])
                w.writerows([r["step"], r["loss"]] for r in history)
        return self

    # ------------------------------------------------------------ sampling

    def _cond(self, condition, n):
        if not self.conditional:
            return None
        if condition is None:
            raise ValueError("conditional flow needs a condition raster")
        r = torch.as_tensor(np.asarray(condition, dtype=float), dtype=FLOW_DTYPE)
        if r.ndim == 2:
            r = r[None].expand(n, -1, -1)
        with torch.no_grad():
            return self.net_.condition_tokens(r)

    def velocity(self, Xt, t, cond=None):
        tt = torch.full((Xt.shape[0],), float(t), dtype=FLOW_DTYPE) if np.isscalar(t) else t
        return self.net_(Xt, tt, cond=cond)

    def _noise(self, n, seed):
        gen = torch.Generator().manual_seed(int(seed))
        return torch.randn((n, self.n_rows_, self.width_), generator=gen, dtype=FLOW_DTYPE)

    def sample(self, n: int = 1, seed: int = 0, steps: int = 50, condition=None, x0=None, normalized=False):
        """Euler-integrate from Gaussian noise; returns raw token sets (n, rows, width)."""
        check_is_fitted(self, "net_")
        X = self._noise(n, seed) if x0 is None else torch.as_tensor(np.asarray(x0, dtype=float), dtype=FLOW_DTYPE)
        cond = self._cond(condition, len(X))
        dt = 1.0 / steps
        with torch.no_grad():
            for k in range(steps):
                X = X + dt * self.velocity(X, k * dt, cond)
        out = X.numpy()
        return out if normalized else self.scaler_.inverse_transform(out)

    def complete(self, targets, n: int = 1, seed: int = 0, steps: int = 50, guidance_lr: float = 0.02,
                 guidance_iters: int = 10, condition=None):
        """Guided sampling: rows ``0..m-1`` are steered toward ``targets``.

        ``targets`` is (m, D) latent codes, or (m, width) full tokens when
        placements should be matched too.  At every Euler step the current
        state takes ``guidance_iters`` gradient steps on
        ``sum_i ||X1_hat[i] - target_i||`` with the one-step estimate
        ``X1_hat = X_t + (1 - t) U(X_t, t)``.
        """
        check_is_fitted(self, "net_")
        targets = np.atleast_2d(np.asarray(targets, dtype=float)) if len(targets) else np.zeros((0, self.width_))
        m, k = targets.shape
        if m >= self.n_rows_:
            raise ValueError(f"{m} provided panels leave no free token row (max {self.n_rows_ - 1})")
        if k > self.width_:
            raise ValueError("target rows wider than tokens")
        tgt = torch.as_tensor(targets / self.scaler_.scale_[:k], dtype=FLOW_DTYPE)
        X = self._noise(n, seed)
        cond = self._cond(condition, n)
        dt = 1.0 / steps
        for p in self.net_.parameters():
            p.requires_grad_(False)
        try:
            for step in range(steps):
                t = step * dt
                if m:
                    for _ in range(guidance_iters):
                        Xg = X.detach().requires_grad_(True)
                        X1 = Xg + (1 - t) * self.velocity(Xg, t, cond)
                        err = (X1[:, :m, :k] - tgt[None]).pow(2).sum(-1).clamp_min(1e-24).sqrt().sum()
                        (g,) = torch.autograd.grad(err, Xg)
                        X = (Xg - guidance_lr * g).detach()
                with torch.no_grad():
                    X = X + dt * self.velocity(X, t, cond)
        finally:
            for p in self.net_.parameters():
                p.requires_grad_(True)
        return self.scaler_.inverse_transform(X.numpy())

    # ------------------------------------------------------------ padding threshold

    def row_norms(self, tokens) -> np.ndarray:
        return np.linalg.norm(self.scaler_.transform(tokens), axis=-1)

    def calibrate(self, n: int = 64, seed: int = 10_000, steps: int = 50, condition=None):
        """Set the padding threshold ``tau_`` from the row norms of generated sets."""
        X = self.sample(n, seed=seed, steps=steps, condition=condition)
        self.tau_ = float(split_norm_threshold(self.row_norms(X)))
        return self.tau_

    def decode(self, tokens, vae, grid_n: int = 128) -> SewingPattern:
        if getattr(self, "tau_", None) is None:
            raise ValueError("padding threshold not calibrated; call calibrate() first")
        return detokenize(tokens, vae, self.scaler_, self.tau_, grid_n)

    # ------------------------------------------------------------ persistence

    def save(self, path, meta: dict | None = None) -> None:
        check_is_fitted(self, "net_")
        info = {"kind": "pattern-flow", "conditional": self.conditional, "rows": self.n_rows_, "width": self.width_,
                "scale": self.scaler_.scale_.tolist(), "tau": self.tau_, **(meta or {})}
        save_checkpoint(path, module_tensors(self.net_, "net."), self.cfg.to_dict(), info)

    @classmethod
    def load(cls, path) -> "PatternFlow":
        tensors, config, meta = load_checkpoint(path)
        if meta.get("kind") != "pattern-flow":
            raise ValueError(f"{path} is not a flow checkpoint")
        model = cls(NetworkConfig.from_dict(config), conditional=bool(meta["conditional"]))
        model._build(int(meta["rows"]), int(meta["width"]))
        load_module(model.net_, tensors, "net.")
        model.scaler_ = TokenScaler()
        model.scaler_.scale_ = np.asarray(meta["scale"], dtype=float)
        model.tau_ = meta.get("tau")
        return model


def interpolate(X0, X1, t):
    """Point on the linear path at time ``t`` (broadcast over rows and width)."""
    t = torch.as_tensor(t, dtype=X0.dtype).reshape(-1, *([1] * (X0.dim() - 1)))
    return (1 - t) * X0 + t * X1


def target_velocity(X0, X1, t=None):
    return X1 - X0
