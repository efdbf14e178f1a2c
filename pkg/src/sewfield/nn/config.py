from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields

_WEIGHTS = {"lambda_kl", "lambda_grad", "lambda_z", "lambda_c", "lambda_l", "lambda_s", "weight_decay", "warmup_frac"}


@dataclass
class NetworkConfig:
    """Every width, depth, schedule, seed and loss weight used by the models.

    Defaults are this package's choices for desk-scale training, not values
    taken from any published model.
    """

    latent_dim: int = 32
    # panel encoder
    n_boundary: int = 128
    enc_width: int = 128
    enc_heads: int = 4
    enc_blocks: int = 2
    # field decoder
    dec_width: int = 256
    dec_layers: int = 6
    dec_freqs: int = 4
    # VAE training
    vae_steps: int = 4000
    vae_batch: int = 8
    vae_lr: float = 5e-4
    n_uniform: int = 256
    n_near: int = 256
    near_sigma: float = 0.05
    n_endpoint: int = 64
    endpoint_sigma: float = 0.02
    eikonal_points: int = 128
    lambda_kl: float = 1e-4
    lambda_grad: float = 0.1
    # flow matching
    flow_width: int = 128
    flow_blocks: int = 6
    flow_heads: int = 4
    flow_steps: int = 6000
    flow_batch: int = 64
    flow_lr: float = 3e-4
    raster_size: int = 64
    patch_size: int = 8
    # stitching
    stitch_width: int = 128
    stitch_points: int = 32
    stitch_blocks: int = 3
    stitch_heads: int = 4
    stitch_steps: int = 1500
    stitch_batch: int = 8
    stitch_lr: float = 5e-4
    neg_ratio: int = 4
    # latent recovery and refit
    lambda_z: float = 1e-3
    lambda_c: float = 1.0
    lambda_l: float = 0.1
    lambda_s: float = 1.0
    # optimizer
    weight_decay: float = 1e-5
    warmup_frac: float = 0.02
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "seed":
                if v < 0:
                    raise ValueError("seed must be nonnegative")
            elif f.name in _WEIGHTS:
                if v < 0:
                    raise ValueError(f"{f.name} must be nonnegative")
            elif v <= 0:
                raise ValueError(f"{f.name} must be positive")
        if self.raster_size % self.patch_size:
            raise ValueError("raster_size must be a multiple of patch_size")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        typed = {}
        for f in fields(cls):
            if f.name in d:
                typed[f.name] = type(getattr(cls(), f.name))(d[f.name])
        return cls(**typed)

    def replace(self, **kw) -> "NetworkConfig":
        return dataclasses.replace(self, **kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)
