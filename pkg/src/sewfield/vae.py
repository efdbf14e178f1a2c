"""Panel VAE: boundary-point encoder to a latent code, coordinate decoder to (d_c, d_p)."""
from __future__ import annotations

import csv
import logging
import math
import time

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted
from torch import nn

from .nn import (
    DTYPE,
    MLP,
    AttentionPool,
    FourierFeatures,
    flush_denormals,
    NetworkConfig,
    TransformerBlock,
    load_checkpoint,
    load_module,
    make_optimizer,
    module_tensors,
    save_checkpoint,
    seeded,
    spatial_gradient,
)
from .oracles import sample_boundary, sdf_oracle, udf_oracle
from .pattern import Panel, check_panel

log = logging.getLogger(__name__)

# training runs in single precision; the fitted model is cast to DTYPE
TRAIN_DTYPE = torch.float32
UDF_FLOOR = math.log(2.0) / 100  # softplus(0) at beta = 100


class PanelEncoder(nn.Module):
    """Per-point lift, self-attention over boundary samples, attention pooling."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.ff = FourierFeatures(cfg.dec_freqs)
        self.lift = MLP([self.ff.out_dim, cfg.enc_width, cfg.enc_width])
        self.blocks = nn.ModuleList(TransformerBlock(cfg.enc_width, cfg.enc_heads) for _ in range(cfg.enc_blocks))
        self.pool = AttentionPool(cfg.enc_width, cfg.enc_heads)
        self.head = nn.Linear(cfg.enc_width, 2 * cfg.latent_dim)

    def forward(self, pts):
        h = self.lift(self.ff(pts))
        for blk in self.blocks:
            h = blk(h)
        mean, logvar = self.head(self.pool(h)).chunk(2, dim=-1)
        return mean, logvar.clamp(-20.0, 10.0)


class FieldDecoder(nn.Module):
    """MLP f(x, z) -> (d_c, d_p) with softplus activations and a skip input."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.ff = FourierFeatures(cfg.dec_freqs)
        d_in = self.ff.out_dim + cfg.latent_dim
        w = cfg.dec_width
        n = cfg.dec_layers
        self.skip = n // 2
        layers = []
        for k in range(n):
            a = d_in if k == 0 else w
            if k == self.skip:
                a = w + d_in
            b = 2 if k == n - 1 else w
            layers.append(nn.Linear(a, b))
        self.layers = nn.ModuleList(layers)

    def forward(self, x, z):
        z = z.unsqueeze(-2).expand(*x.shape[:-1], z.shape[-1])
        inp = torch.cat([self.ff(x), z], dim=-1)
        h = inp
        for k, layer in enumerate(self.layers):
            if k == self.skip:
                h = torch.cat([h, inp], dim=-1)
            h = layer(h)
            if k < len(self.layers) - 1:
                h = F.softplus(h, beta=100)
        # shifted so h = 0 decodes to an exact zero; negatives survive in training to keep gradients alive
        dp = F.softplus(h[..., 1], beta=100) - UDF_FLOOR
        if not self.training:
            dp = dp.clamp_min(0.0)
        return torch.stack([h[..., 0], dp], dim=-1)


def kl_standard_normal(mean, logvar):
    return 0.5 * (mean.pow(2) + logvar.exp() - 1.0 - logvar).sum(-1)


class PanelVAE(BaseEstimator, TransformerMixin):
    """Variational autoencoder over single panels.

    ``transform`` maps panels to posterior-mean latent codes;
    ``inverse_transform`` decodes codes back to panels through the meshing
    pipeline.
    """

    def __init__(self, config: NetworkConfig | None = None, log_path=None, verbose: bool = False):
        self.config = config
        self.log_path = log_path
        self.verbose = verbose

    @property
    def cfg(self) -> NetworkConfig:
        return self.config or NetworkConfig()

    def _build(self):
        with seeded(self.cfg.seed):
            self.encoder_ = PanelEncoder(self.cfg).to(DTYPE).eval()
            self.decoder_ = FieldDecoder(self.cfg).to(DTYPE).eval()

    # ------------------------------------------------------------ training

    def _batch(self, panels, idx, rng):
        cfg = self.cfg
        bpts, q, gt = [], [], []
        for i in idx:
            p = panels[i]
            bpts.append(sample_boundary(p, cfg.n_boundary, rng))
            uni = rng.uniform(-1.0, 1.0, (cfg.n_uniform, 2))
            near = sample_boundary(p, cfg.n_near, rng) + rng.normal(0.0, cfg.near_sigma, (cfg.n_near, 2))
            # the d_p minima are sharp cones that uniform samples rarely hit
            ends = p.endpoints[rng.integers(0, p.n_edges, cfg.n_endpoint)]
            ends = ends + rng.normal(0.0, cfg.endpoint_sigma, ends.shape)
            x = np.clip(np.vstack([uni, near, ends]), -1.0, 1.0)
            q.append(x)
            gt.append(np.stack([sdf_oracle(p, x), udf_oracle(p, x)], axis=-1))
        t = lambda a: torch.as_tensor(np.stack(a), dtype=TRAIN_DTYPE)
        return t(bpts), t(q), t(gt)

    def loss_terms(self, bpts, q, gt, eik_idx, noise):
        """Per-term losses (summed over query points, averaged over panels)."""
        cfg = self.cfg
        mean, logvar = self.encoder_(bpts)
        z = mean + torch.exp(0.5 * logvar) * noise
        pred = self.decoder_(q, z)
        l1 = (pred - gt).abs().sum(1).mean(0)
        g = spatial_gradient(self.decoder_, q[:, eik_idx], z)
        eik = ((g.norm(dim=-1) - 1.0) ** 2).sum(1).mean(0) * (q.shape[1] / len(eik_idx))
        kl = kl_standard_normal(mean, logvar).mean()
        return {"sdf": l1[0], "udf": l1[1], "eik_c": eik[0], "eik_p": eik[1], "kl": kl}

    def total_loss(self, terms):
        cfg = self.cfg
        return (terms["sdf"] + cfg.lambda_grad * terms["eik_c"] + terms["udf"] + cfg.lambda_grad * terms["eik_p"]
                + cfg.lambda_kl * terms["kl"])

    def fit(self, panels, y=None):
        panels = [check_panel(p, separation=False) for p in panels]
        if not panels:
            raise ValueError("empty panel corpus")
        cfg = self.cfg
        self._build()
        self.encoder_.to(TRAIN_DTYPE).train()
        self.decoder_.to(TRAIN_DTYPE).train()
        try:
            with flush_denormals():
                self._train(panels)
        finally:
            self.encoder_.to(DTYPE).eval()
            self.decoder_.to(DTYPE).eval()
        if self.log_path:
            self.write_log(self.log_path)
        return self

    def _train(self, panels):
        cfg = self.cfg
        rng = np.random.default_rng(cfg.seed)
        gen = torch.Generator().manual_seed(cfg.seed)
        params = list(self.encoder_.parameters()) + list(self.decoder_.parameters())
        opt, sched = make_optimizer(params, cfg.vae_lr, cfg.vae_steps, cfg.weight_decay, cfg.warmup_frac)
        history = []
        n_q = cfg.n_uniform + cfg.n_near + cfg.n_endpoint
        t0 = time.time()
        for step in range(cfg.vae_steps):
            idx = rng.choice(len(panels), size=min(cfg.vae_batch, len(panels)), replace=len(panels) < cfg.vae_batch)
            bpts, q, gt = self._batch(panels, idx, rng)
            eik_idx = torch.as_tensor(rng.choice(n_q, size=min(cfg.eikonal_points, n_q), replace=False))
            noise = torch.randn(len(idx), cfg.latent_dim, generator=gen, dtype=TRAIN_DTYPE)
            terms = self.loss_terms(bpts, q, gt, eik_idx, noise)
            loss = self.total_loss(terms)
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite VAE loss at step {step}")
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, 100.0)
            opt.step()
            sched.step()
            row = {"step": step, **{k: v.item() for k, v in terms.items()}}
            history.append(row)
            if self.verbose and step % 100 == 0:
                log.info("vae step %d loss %.4f sdf %.3f udf %.3f (%.0fs)", step, loss.item(),
                         row["sdf"] / n_q, row["udf"] / n_q, time.time() - t0)
        self.history_ = history

    def write_log(self, path):
        cols = ["step", "L_sdf", "L_udf", "L_KL", "eik_c", "eik_p"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.history_:
                w.writerow([r["step"], r["sdf"], r["udf"], r["kl"], r["eik_c"], r["eik_p"]])

    # ------------------------------------------------------------ inference

    def encode(self, panel: Panel, seed: int = 0, points=None):
        """Posterior ``(mean, logvar)`` from ``n_boundary`` boundary samples (or given ``points``)."""
        check_is_fitted(self, "encoder_")
        if points is None:
            points = sample_boundary(panel, self.cfg.n_boundary, np.random.default_rng(seed))
        with torch.no_grad():
            mean, logvar = self.encoder_(torch.as_tensor(points, dtype=DTYPE)[None])
        return mean[0].numpy(), logvar[0].numpy()

    def sample_latent(self, panel: Panel, seed: int = 0) -> np.ndarray:
        """Reparameterized draw ``z = mean + exp(logvar / 2) * eta``."""
        mean, logvar = self.encode(panel, seed)
        eta = np.random.default_rng(seed + 1).standard_normal(mean.shape)
        return mean + np.exp(0.5 * logvar) * eta

    def transform(self, panels, seed: int = 0) -> np.ndarray:
        check_is_fitted(self, "encoder_")
        pts = np.stack([sample_boundary(p, self.cfg.n_boundary, np.random.default_rng(seed)) for p in panels])
        out = []
        with torch.no_grad():
            for lo in range(0, len(pts), 256):
                out.append(self.encoder_(torch.as_tensor(pts[lo:lo + 256], dtype=DTYPE))[0].numpy())
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.cfg.latent_dim))

    def field(self, x, z) -> torch.Tensor:
        """Differentiable decoder call on tensors: (..., N, 2) x (..., D) -> (..., N, 2)."""
        return self.decoder_(x, z)

    def decode(self, x, z, chunk: int = 32768) -> np.ndarray:
        """``(d_c, d_p)`` at points ``x`` (N, 2) for latent ``z`` (D,); returns (N, 2)."""
        check_is_fitted(self, "decoder_")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        zt = torch.as_tensor(np.asarray(z, dtype=float), dtype=DTYPE)
        out = []
        with torch.no_grad():
            for lo in range(0, len(x), chunk):
                out.append(self.decoder_(torch.as_tensor(x[lo:lo + chunk], dtype=DTYPE), zt).numpy())
        return np.concatenate(out, axis=0)

    def inverse_transform(self, Z, grid_n: int = 128):
        from .meshing import panel_from_latent

        return [panel_from_latent(z, self, grid_n=grid_n) for z in np.atleast_2d(Z)]

    # ------------------------------------------------------------ persistence

    def save(self, path, meta: dict | None = None) -> None:
        check_is_fitted(self, "encoder_")
        tensors = {**module_tensors(self.encoder_, "encoder."), **module_tensors(self.decoder_, "decoder.")}
        save_checkpoint(path, tensors, self.cfg.to_dict(), {"kind": "panel-vae", **(meta or {})})

    @classmethod
    def load(cls, path) -> "PanelVAE":
        tensors, config, meta = load_checkpoint(path)
        if meta.get("kind") != "panel-vae":
            raise ValueError(f"{path} is not a panel VAE checkpoint")
        model = cls(NetworkConfig.from_dict(config))
        model._build()
        load_module(model.encoder_, tensors, "encoder.")
        load_module(model.decoder_, tensors, "decoder.")
        model.encoder_.eval()
        model.decoder_.eval()
        return model


class DivergenceError(RuntimeError):
    pass


def recover_latent(contour, vae: PanelVAE, steps: int = 500, lambda_z: float | None = None, lr: float = 2e-2,
                   patience: int = 50):
    """Latent code whose zero level set passes through ``contour`` (normalized frame).

    Minimizes ``sum_x d_c(x, z)^2 + lambda_z * ||z||`` by gradient steps (Adam)
    from ``z = 0``.  Returns ``(z, objective_trace)``.
    """
    contour = np.asarray(contour, dtype=float)
    if contour.ndim != 2 or len(contour) < 16:
        raise ValueError("need at least 16 contour points")
    lam = vae.cfg.lambda_z if lambda_z is None else lambda_z
    x = torch.as_tensor(contour, dtype=DTYPE)
    z = torch.zeros(vae.cfg.latent_dim, dtype=DTYPE, requires_grad=True)
    opt = torch.optim.Adam([z], lr=lr)
    for p in vae.decoder_.parameters():
        p.requires_grad_(False)
    trace, rising = [], 0
    try:
        for step in range(steps):
            d = vae.field(x, z)[..., 0]
            obj = (d**2).sum() + lam * torch.sqrt((z**2).sum() + 1e-12)
            opt.zero_grad()
            obj.backward()
            opt.step()
            val = obj.item()
            if trace and val > trace[-1]:
                rising += 1
                if rising >= patience:
                    raise DivergenceError(f"latent recovery diverged at step {step}")
            else:
                rising = 0
            trace.append(val)
    finally:
        for p in vae.decoder_.parameters():
            p.requires_grad_(True)
    return z.detach().numpy(), trace


def contour_objective(contour, z, vae: PanelVAE, lambda_z: float) -> float:
    d = vae.decode(contour, z)[:, 0]
    return float((d**2).sum() + lambda_z * np.linalg.norm(z))
