from __future__ import annotations

import math

import torch


def make_optimizer(params, lr: float, total_steps: int, weight_decay: float = 0.0, warmup_frac: float = 0.02):
    """AdamW (decoupled weight decay) with linear warmup and cosine decay to 5% of ``lr``."""
    opt = torch.optim.AdamW(params, lr=lr, weight_decay=weight_decay)
    warmup = max(1, int(warmup_frac * total_steps))

    def factor(step):
        if step < warmup:
            return (step + 1) / warmup
        p = min(1.0, (step - warmup) / max(1, total_steps - warmup))
        return 0.05 + 0.95 * 0.5 * (1 + math.cos(math.pi * p))

    return opt, torch.optim.lr_scheduler.LambdaLR(opt, factor)
