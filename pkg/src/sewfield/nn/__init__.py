"""Differentiable-computation substrate (float64, reverse mode via torch autograd)."""
from __future__ import annotations

from contextlib import contextmanager

import torch

from .checkpoint import CheckpointError, load_checkpoint, load_module, module_tensors, save_checkpoint
from .config import NetworkConfig
from .layers import (
    DTYPE,
    MLP,
    AttentionPool,
    FourierFeatures,
    MultiHeadAttention,
    TransformerBlock,
    as_tensor,
    modulate,
    self_attention,
    timestep_embedding,
)
from .optim import make_optimizer

SPATIAL_H = 1e-3


def spatial_gradient(fn, x: torch.Tensor, *args, h: float = SPATIAL_H) -> torch.Tensor:
    """Central-difference gradient of ``fn(x, *args)`` with respect to 2D ``x``.

    ``fn`` maps (..., 2) points to (..., C) outputs; the result has shape
    (..., C, 2).  The four stencil evaluations are ordinary graph operations,
    so the gradient stays differentiable with respect to network parameters.
    """
    ex = torch.tensor([h, 0.0], dtype=x.dtype)
    ey = torch.tensor([0.0, h], dtype=x.dtype)
    stacked = torch.stack([x + ex, x - ex, x + ey, x - ey], dim=0)
    out = fn(stacked, *args)
    gx = (out[0] - out[1]) / (2 * h)
    gy = (out[2] - out[3]) / (2 * h)
    return torch.stack([gx, gy], dim=-1)


@contextmanager
def flush_denormals():
    """Flush subnormal floats to zero for the duration (softplus and attention
    tails underflow into them, and CPU arithmetic on subnormals is very slow)."""
    changed = torch.set_flush_denormal(True)
    try:
        yield
    finally:
        if changed:
            torch.set_flush_denormal(False)


def seeded(seed: int):
    """Context manager forking torch's global RNG and seeding it (for init)."""
    ctx = torch.random.fork_rng(devices=[])

    class _Ctx:
        def __enter__(self):
            ctx.__enter__()
            torch.manual_seed(seed)

        def __exit__(self, *exc):
            return ctx.__exit__(*exc)

    return _Ctx()


__all__ = [
    "DTYPE", "MLP", "AttentionPool", "CheckpointError", "FourierFeatures", "MultiHeadAttention", "NetworkConfig",
    "TransformerBlock", "as_tensor", "flush_denormals", "load_checkpoint", "load_module", "make_optimizer", "modulate",
    "module_tensors", "save_checkpoint", "seeded", "self_attention", "spatial_gradient", "timestep_embedding",
]
