"""Noise schedule, forward corruption, reverse steps, losses and samplers.

Steps are 1-based throughout (``t`` in ``1..T``) with the convention
``alpha_bar_0 = 1``. The per-step helpers are written against plain array
arithmetic and work on numpy arrays and torch tensors alike; ``t`` may be an
int or a length-``B`` integer array for per-element steps on a batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta_start: float
    beta_end: float
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)
    alpha_bar_prev: np.ndarray = field(repr=False)
    beta_tilde: np.ndarray = field(repr=False)

    def _idx(self, t):
        t_arr = np.asarray(t)
        if np.any(t_arr < 1) or np.any(t_arr > self.T):
            raise ValueError(f"step t must lie in [1, {self.T}], got {t}")
        return t_arr - 1

    def at(self, name: str, t):
        """Table value at step ``t`` (float for scalar ``t``, array otherwise)."""
        vals = getattr(self, name)[self._idx(t)]
        return float(vals) if np.ndim(vals) == 0 else vals

    def to_dict(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end}


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule and its derived tables."""
    if int(T) != T or T < 1:
        raise ValueError("T must be a positive integer")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    T = int(T)
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    beta_tilde = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta
    for arr in (beta, alpha, alpha_bar, alpha_bar_prev, beta_tilde):
        arr.setflags(write=False)
    return NoiseSchedule(T, float(beta_start), float(beta_end), beta, alpha, alpha_bar, alpha_bar_prev, beta_tilde)


def _coef(sched: NoiseSchedule, name: str, t, like, fn=None):
    """Schedule value at ``t`` shaped to broadcast against batch ``like``."""
    vals = np.asarray(sched.at(name, t), dtype=np.float64)
    if fn is not None:
        vals = fn(vals)
    if vals.ndim == 0:
        return float(vals)
    vals = vals.reshape((-1,) + (1,) * (like.ndim - 1))
    if isinstance(like, torch.Tensor):
        return torch.as_tensor(vals, dtype=like.dtype)
    return vals


def _where(mask, a, b):
    if isinstance(a, torch.Tensor):
        return torch.where(torch.as_tensor(mask, dtype=torch.bool), a, b)
    return np.where(np.asarray(mask, dtype=bool), a, b)


def forward_sample(h0, t, noise, sched: NoiseSchedule):
    """``h_t = sqrt(abar_t) h_0 + sqrt(1 - abar_t) noise``."""
    if tuple(h0.shape) != tuple(noise.shape):
        raise ValueError(f"shape mismatch: h0 {tuple(h0.shape)} vs noise {tuple(noise.shape)}")
    a = _coef(sched, "alpha_bar", t, h0, np.sqrt)
    s = _coef(sched, "alpha_bar", t, h0, lambda v: np.sqrt(1.0 - v))
    return a * h0 + s * noise


def forward_sample_masked(pair0, mask, t, noise, sched: NoiseSchedule):
    """Corrupt only where ``mask`` is 1; the Jack block is passed through untouched."""
    if tuple(pair0.shape) != tuple(noise.shape):
        raise ValueError(f"shape mismatch: pair {tuple(pair0.shape)} vs noise {tuple(noise.shape)}")
    if tuple(pair0.shape[-3:]) != tuple(np.shape(mask)[-3:]):
        raise ValueError(f"mask shape {np.shape(mask)} does not match pair {tuple(pair0.shape)}")
    noisy = forward_sample(pair0, t, noise, sched)
    return _where(mask, noisy, pair0)


def forward_step(h_prev, t, noise, sched: NoiseSchedule):
    """One Markov transition ``h_t = sqrt(1 - beta_t) h_{t-1} + sqrt(beta_t) noise``."""
    b = _coef(sched, "beta", t, h_prev)
    return np.sqrt(1.0 - b) * h_prev + np.sqrt(b) * noise


def posterior_params(h0, ht, t, sched: NoiseSchedule):
    """Mean and variance of ``q(h_{t-1} | h_t, h_0)``."""
    ab = sched.at("alpha_bar", t)
    ab_prev = sched.at("alpha_bar_prev", t)
    b = sched.at("beta", t)
    a = sched.at("alpha", t)
    c0 = np.sqrt(ab_prev) * b / (1.0 - ab)
    ct = np.sqrt(a) * (1.0 - ab_prev) / (1.0 - ab)
    return c0 * h0 + ct * ht, sched.at("beta_tilde", t)


def _noise_scale(sched, t, strict_paper):
    bt = sched.at("beta_tilde", t)
    return bt if strict_paper else float(np.sqrt(bt))


def _denoise_mean(x_t, t, eps, sched):
    a = sched.at("alpha", t)
    ab = sched.at("alpha_bar", t)
    b = sched.at("beta", t)
    return (x_t - (b / np.sqrt(1.0 - ab)) * eps) / np.sqrt(a)


def _check_z(z, t):
    if z is None:
        return
    if t == 1 and np.any(np.asarray(z) != 0):
        raise ValueError("the last reverse step (t=1) takes no perturbation noise")


def reverse_step_conditional(h_t, t: int, predicted_noise, z, sched: NoiseSchedule, strict_paper: bool = False):
    """``h_{t-1} = (h_t - beta_t / sqrt(1 - abar_t) eps) / sqrt(alpha_t) + sigma_t z``.

    ``sigma_t = sqrt(beta_tilde_t)`` so the step variance is the posterior
    variance; ``strict_paper=True`` uses ``sigma_t = beta_tilde_t`` instead.
    """
    _check_z(z, t)
    out = _denoise_mean(h_t, t, predicted_noise, sched)
    if z is not None:
        out = out + _noise_scale(sched, t, strict_paper) * z
    return out


def reverse_step_masked(pair_t, mask, t: int, predicted_noise, z, sched: NoiseSchedule, strict_paper: bool = False):
    """Reverse step on the Alice block of a pair image; the Jack block is returned unchanged."""
    stepped = reverse_step_conditional(pair_t, t, predicted_noise, z, sched, strict_paper)
    return _where(mask, stepped, pair_t)


# --- training losses -------------------------------------------------------

def _draw(rng: np.random.Generator, sched: NoiseSchedule, shape, t=None, noise=None):
    b = shape[0]
    if t is None:
        t = rng.integers(1, sched.T + 1, size=b)
    t = np.array(np.broadcast_to(np.asarray(t, dtype=np.int64), (b,)))
    if noise is None:
        noise = rng.standard_normal(shape)
    return t, noise


def _tensor(x, dtype):
    if isinstance(x, torch.Tensor):
        return x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def _net_dtype(net):
    return next(net.parameters()).dtype


def loss_masked(net, pair0, mask, rng: np.random.Generator, sched: NoiseSchedule, t=None, noise=None,
                predictor=None):
    """Masked noise-prediction loss, mean squared residual over Alice entries.

    ``t`` (per batch element) and ``noise`` are drawn from ``rng`` unless
    given. ``predictor(noisy, t)`` replaces ``net`` when supplied. Returns a
    scalar torch tensor attached to the autograd graph of ``net``.
    """
    dtype = _net_dtype(net) if net is not None else torch.float64
    pair0 = _tensor(pair0, dtype)
    t, noise = _draw(rng, sched, tuple(pair0.shape), t, noise)
    noise = _tensor(noise, dtype)
    m = torch.as_tensor(np.array(np.broadcast_to(np.asarray(mask), tuple(pair0.shape))), dtype=dtype)
    noisy = forward_sample_masked(pair0, mask, t, noise, sched)
    tt = torch.as_tensor(np.array(t))
    pred = predictor(noisy, tt) if predictor is not None else net(noisy, tt)
    resid = m * (noise - pred)
    return resid.pow(2).sum() / m.sum()


def loss_conditional(net, h0, jack, rng: np.random.Generator, sched: NoiseSchedule, t=None, noise=None,
                     predictor=None):
    """Conditional noise-prediction loss ``mean((noise - net(h_t, t, jack))^2)``."""
    dtype = _net_dtype(net) if net is not None else torch.float64
    h0 = _tensor(h0, dtype)
    jack = _tensor(jack, dtype)
    t, noise = _draw(rng, sched, tuple(h0.shape), t, noise)
    noise = _tensor(noise, dtype)
    noisy = forward_sample(h0, t, noise, sched)
    tt = torch.as_tensor(np.array(t))
    pred = predictor(noisy, tt, jack) if predictor is not None else net(noisy, tt, jack)
    return (noise - pred).pow(2).mean()


# --- samplers ---------------------------------------------------------------

def _predict(net, x: np.ndarray, t: int, cond: np.ndarray | None = None) -> np.ndarray:
    dtype = _net_dtype(net)
    with torch.no_grad():
        xt = torch.as_tensor(x, dtype=dtype)
        tt = torch.full((x.shape[0],), t, dtype=torch.int64)
        if cond is None:
            out = net(xt, tt)
        else:
            out = net(xt, tt, torch.as_tensor(cond, dtype=dtype))
    return out.numpy().astype(np.float64)


def _batched(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ValueError(f"expected (2, M, K) or (N, 2, M, K) images, got {x.shape}")
    return x, False


def _predict_batched(net, x, t, cond, batch_size):
    if len(x) <= batch_size:
        return _predict(net, x, t, cond)
    out = np.empty_like(x)
    for lo in range(0, len(x), batch_size):
        sl = slice(lo, lo + batch_size)
        out[sl] = _predict(net, x[sl], t, None if cond is None else cond[sl])
    return out


def sample_ccmdm(jack, sched: NoiseSchedule, net, rng: np.random.Generator, strict_paper: bool = False,
                 return_pair: bool = False, batch_size: int = 512):
    """Generate Alice's image(s) by masked reverse diffusion next to the clean Jack block.

    State is kept in float64 so the Jack block is carried through bit-for-bit.
    """
    jack, single = _batched(jack)
    n, c, m, k = jack.shape
    mask = np.zeros((c, 2 * m, k), dtype=bool)
    mask[:, m:, :] = True
    pair = np.concatenate([jack, rng.standard_normal((n, c, m, k))], axis=-2)
    for t in range(sched.T, 0, -1):
        eps = _predict_batched(net, pair, t, None, batch_size)
        z = rng.standard_normal(pair.shape) if t > 1 else None
        pair = reverse_step_masked(pair, mask, t, eps, z, sched, strict_paper)
    alice = pair[..., m:, :]
    if single:
        alice, pair = alice[0], pair[0]
    return (alice, pair) if return_pair else alice


def sample_cadm(jack, sched: NoiseSchedule, net, rng: np.random.Generator, strict_paper: bool = False,
                batch_size: int = 512):
    """Generate Alice's image(s) from pure noise, conditioned on Jack's at every step.

    The condition encoder runs inside the network on every call, i.e. the
    key/value features are re-extracted from Jack's image at each step.
    """
    jack, single = _batched(jack)
    h = rng.standard_normal(jack.shape)
    for t in range(sched.T, 0, -1):
        eps = _predict_batched(net, h, t, jack, batch_size)
        z = rng.standard_normal(h.shape) if t > 1 else None
        h = reverse_step_conditional(h, t, eps, z, sched, strict_paper)
    return h[0] if single else h
