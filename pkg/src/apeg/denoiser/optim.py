"""Bias-corrected adaptive-moment (Adam) updates over a :class:`ParamStore`."""
from __future__ import annotations

import math

import torch

from .params import ParamStore


def adam_step(params, grads, exp_avg, exp_avg_sq, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
              step: int = 1):
    """In-place Adam update of each tensor in ``params``.

    ``exp_avg``/``exp_avg_sq`` are the first/second moment buffers, updated in
    place. ``step`` counts from 1.
    """
    if step < 1:
        raise ValueError("step counts from 1")
    b1, b2 = betas
    bc1 = 1.0 - b1 ** step
    bc2 = 1.0 - b2 ** step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, exp_avg, exp_avg_sq):
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            denom = (v / bc2).sqrt_().add_(eps)
            p.addcdiv_(m, denom, value=-lr / bc1)


class Adam:
    def __init__(self, store: ParamStore, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.step_count = 0
        self.exp_avg = [torch.zeros_like(p) for _, p in store.items()]
        self.exp_avg_sq = [torch.zeros_like(p) for _, p in store.items()]

    def step(self):
        self.step_count += 1
        params = [p for _, p in self.store.items()]
        grads = [p.grad for p in params]
        adam_step(params, grads, self.exp_avg, self.exp_avg_sq, self.lr, self.betas, self.eps, self.step_count)

    def zero_grad(self):
        self.store.zero_grad()
