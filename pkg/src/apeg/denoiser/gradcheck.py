"""Analytic-vs-finite-difference gradient validation on a small double-precision net."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch.func import functional_call, vmap

from ..diffusion import loss_conditional, loss_masked, make_schedule
from ..fingerprint import build_mask
from .config import NetConfig, tiny_preset
from .nets import build_net
from .params import ParamStore, backward


@dataclass
class LossCheck:
    loss: str
    num_params: int
    max_rel_err: float
    worst_block: str
    per_block: dict = field(default_factory=dict)


@dataclass
class GradCheckReport:
    tolerance: float
    checks: list

    @property
    def max_rel_err(self) -> float:
        return max(c.max_rel_err for c in self.checks)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            lines.append(f"{c.loss}: params={c.num_params} max_rel_err={c.max_rel_err:.3e} worst={c.worst_block}")
        lines.append(f"{'PASS' if self.passed else 'FAIL'} (tolerance {self.tolerance:g})")
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)`` elementwise."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def randomize(net, rng: np.random.Generator, scale: float = 0.3):
    """Overwrite every parameter (zero-initialised ones included) with Gaussian draws."""
    with torch.no_grad():
        for p in net.parameters():
            p.copy_(torch.as_tensor(scale * rng.standard_normal(tuple(p.shape)), dtype=p.dtype))


def _detach_output(module, inputs, output):
    return output.detach()


def _check_one(kind, net, loss_fn, step, floor, sabotage, chunk):
    """``loss_fn(predictor)`` evaluates the loss with ``predictor`` standing in for the net."""
    store = ParamStore(net)
    handle = None
    if sabotage is not None:
        handle = dict(net.named_modules())[sabotage].register_forward_hook(_detach_output)
    try:
        backward(loss_fn(net), store)
    finally:
        if handle is not None:
            handle.remove()
    analytic = store.grad_vector()
    theta = torch.as_tensor(store.to_vector(), dtype=torch.float64)
    offsets = store.offsets()
    shapes = {name: tuple(p.shape) for name, p in store.items()}

    def loss_at(vec):
        params = {name: vec[sl].reshape(shapes[name]) for name, sl in offsets.items()}
        return loss_fn(lambda *args: functional_call(net, params, args))

    batched = vmap(loss_at)
    n = theta.numel()
    numeric = np.empty(n)
    with torch.no_grad():
        for lo in range(0, n, chunk):
            idx = torch.arange(lo, min(lo + chunk, n))
            eye = torch.zeros(len(idx), n, dtype=theta.dtype)
            eye[torch.arange(len(idx)), idx] = step
            up = batched(theta + eye)
            down = batched(theta - eye)
            numeric[lo:lo + len(idx)] = ((up - down) / (2 * step)).numpy()
    rel = relative_error(analytic, numeric, floor)
    per_block = {name: float(rel[sl].max()) for name, sl in offsets.items()}
    worst = max(per_block, key=per_block.get)
    return LossCheck(kind, store.num_params, float(rel.max()), worst, per_block)


def grad_check(cfg: NetConfig | None = None, tolerance: float = 1e-4, step: float = 1e-5,
               image_shape=(4, 8), batch: int = 2, T: int = 10, seed: int = 0,
               floor: float = 1e-6, sabotage: str | None = None,
               chunk: int = 256) -> GradCheckReport:
    """Compare autograd gradients of both diffusion losses against central differences.

    Runs in float64 with dropout disabled on a randomly initialised net.
    ``sabotage`` names a submodule whose output is detached during the analytic
    pass only, dropping its term from the chain rule (negative control).
    """
    cfg = cfg or tiny_preset()
    if cfg.dropout:
        cfg = NetConfig.from_dict({**cfg.to_dict(), "dropout": 0.0})
    rng = np.random.default_rng(seed)
    sched = make_schedule(T, 1e-4, 0.02)
    m, k = image_shape
    checks = []

    net = build_net("ccmdm", cfg, (2 * m, k), dtype=torch.float64).eval()
    randomize(net, rng)
    pair = rng.uniform(-1, 1, (batch, 2, 2 * m, k))
    mask = build_mask((m, k))
    t = rng.integers(1, T + 1, batch)
    noise = rng.standard_normal(pair.shape)

    def masked(pred):
        return loss_masked(net, pair, mask, rng, sched, t=t, noise=noise, predictor=pred)

    checks.append(_check_one("loss_masked", net, masked, step, floor, sabotage, chunk))

    net_c = build_net("cadm", cfg, (m, k), dtype=torch.float64).eval()
    randomize(net_c, rng)
    h0 = rng.uniform(-1, 1, (batch, 2, m, k))
    jack = rng.uniform(-1, 1, (batch, 2, m, k))
    t_c = rng.integers(1, T + 1, batch)
    noise_c = rng.standard_normal(h0.shape)

    def conditional(pred):
        return loss_conditional(net_c, h0, jack, rng, sched, t=t_c, noise=noise_c, predictor=pred)

    checks.append(_check_one("loss_conditional", net_c, conditional, step, floor, sabotage, chunk))
    return GradCheckReport(tolerance, checks)
