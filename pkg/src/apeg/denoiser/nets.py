"""U-shaped noise predictors: single-branch (CCMDM) and dual-branch with cross-attention (CADM)."""
from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .attention import SpatialCrossAttention, SpatialSelfAttention, _groups
from .config import NetConfig


def sinusoidal_features(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half, 1))
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class TimeEmbedding(nn.Module):
    """Sinusoidal step features followed by a two-layer projection to ``gamma * C_b``."""

    def __init__(self, base: int, out_dim: int):
        super().__init__()
        self.base = base
        self.lin1 = nn.Linear(base, out_dim)
        self.lin2 = nn.Linear(out_dim, out_dim)

    def forward(self, t):
        emb = sinusoidal_features(t, self.base).to(self.lin1.weight.dtype)
        return self.lin2(F.silu(self.lin1(emb)))


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int | None, dropout: float):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        # scale/shift after norm2: an additive bias before it is cancelled
        # whenever a group holds a single channel
        self.time_proj = nn.Linear(time_dim, 2 * out_ch) if time_dim else None
        self.norm2 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.dropout = nn.Dropout(dropout)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, temb=None):
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.norm2(h)
        if self.time_proj is not None:
            scale, shift = self.time_proj(F.silu(temb))[:, :, None, None].chunk(2, dim=1)
            h = h * (1 + scale) + shift
        h = self.conv2(self.dropout(F.silu(h)))
        return self.skip(x) + h


class Downsample(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv = nn.Conv2d(ch, ch, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class ConditionEncoder(nn.Module):
    """Encodes the collaborator fingerprint into one feature map per level."""

    def __init__(self, cfg: NetConfig, in_ch: int = 2):
        super().__init__()
        widths = cfg.widths
        self.conv_in = nn.Conv2d(in_ch, cfg.base_channels, 3, padding=1)
        self.levels = nn.ModuleList()
        self.downs = nn.ModuleList()
        ch = cfg.base_channels
        for lvl, width in enumerate(widths):
            blocks = nn.ModuleList()
            for _ in range(cfg.resnet_blocks):
                blocks.append(ResBlock(ch, width, None, cfg.dropout))
                ch = width
            self.levels.append(blocks)
            self.downs.append(Downsample(ch) if lvl < len(widths) - 1 else nn.Identity())

    def forward(self, cond):
        h = self.conv_in(cond)
        feats = []
        for blocks, down in zip(self.levels, self.downs):
            for block in blocks:
                h = block(h)
            feats.append(h)
            h = down(h)
        return feats


class _UNet(nn.Module):
    def __init__(self, cfg: NetConfig, image_shape: tuple[int, int], conditional: bool, in_ch: int = 2):
        super().__init__()
        height, width = image_shape
        step = 2 ** (cfg.num_levels - 1)
        if height % step or width % step:
            raise ValueError(
                f"image shape {image_shape} is not divisible by 2**{cfg.num_levels - 1} "
                f"required by {cfg.num_levels} levels"
            )
        self.cfg = cfg
        self.image_shape = (int(height), int(width))
        self.in_ch = in_ch
        self.conditional = conditional
        widths = cfg.widths
        tdim = cfg.time_dim
        use_ca = conditional and cfg.any_cross_attn

        self.time_embed = TimeEmbedding(cfg.base_channels, tdim)
        self.concat_cond = conditional and cfg.cond_concat
        self.conv_in = nn.Conv2d(2 * in_ch if self.concat_cond else in_ch, cfg.base_channels, 3, padding=1)

        self.enc_blocks = nn.ModuleList()
        self.enc_sa = nn.ModuleList()
        self.enc_ca = nn.ModuleList()
        self.downs = nn.ModuleList()
        ch = cfg.base_channels
        skip_chs = []
        for lvl, w in enumerate(widths):
            blocks = nn.ModuleList()
            for _ in range(cfg.resnet_blocks):
                blocks.append(ResBlock(ch, w, tdim, cfg.dropout))
                ch = w
            self.enc_blocks.append(blocks)
            self.enc_sa.append(SpatialSelfAttention(w, cfg.heads) if cfg.self_attn[lvl] else nn.Identity())
            self.enc_ca.append(SpatialCrossAttention(w, w, cfg.heads) if use_ca and cfg.cross_attn[lvl] else None)
            skip_chs.append(w)
            self.downs.append(Downsample(w) if lvl < len(widths) - 1 else nn.Identity())

        self.mid1 = ResBlock(ch, ch, tdim, cfg.dropout)
        self.mid_sa = SpatialSelfAttention(ch, cfg.heads)
        self.mid_ca = SpatialCrossAttention(ch, widths[-1], cfg.heads) if use_ca else None
        self.mid2 = ResBlock(ch, ch, tdim, cfg.dropout)

        self.dec_blocks = nn.ModuleList()
        self.dec_sa = nn.ModuleList()
        self.dec_ca = nn.ModuleList()
        self.ups = nn.ModuleList()
        for lvl in reversed(range(len(widths))):
            w = widths[lvl]
            blocks = nn.ModuleList()
            blocks.append(ResBlock(ch + skip_chs[lvl], w, tdim, cfg.dropout))
            for _ in range(cfg.resnet_blocks - 1):
                blocks.append(ResBlock(w, w, tdim, cfg.dropout))
            ch = w
            self.dec_blocks.append(blocks)
            self.dec_sa.append(SpatialSelfAttention(w, cfg.heads) if cfg.self_attn[lvl] else nn.Identity())
            self.dec_ca.append(SpatialCrossAttention(w, w, cfg.heads) if use_ca and cfg.cross_attn[lvl] else None)
            self.ups.append(Upsample(w) if lvl > 0 else nn.Identity())

        self.norm_out = nn.GroupNorm(_groups(ch), ch)
        self.conv_out = nn.Conv2d(ch, in_ch, 3, padding=1)

        if conditional:
            self.cond_encoder = None if cfg.share_cond_encoder else ConditionEncoder(cfg, in_ch)
        self.reset_parameters()

    def reset_parameters(self, generator: torch.Generator | None = None):
        """Fan-in uniform init; output conv and attention output projections start at zero."""
        for mod in self.modules():
            if isinstance(mod, (nn.Conv2d, nn.Linear)):
                fan_in = mod.weight[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                with torch.no_grad():
                    mod.weight.uniform_(-bound, bound, generator=generator)
                    if mod.bias is not None:
                        mod.bias.zero_()
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.startswith("conv_out.") or ".attn.to_out." in name:
                    p.zero_()

    def _encode_condition(self, cond):
        if self.cond_encoder is not None:
            return self.cond_encoder(cond)
        # shared weights: run the main encoder path without time conditioning
        h = self.conv_in(torch.cat([torch.zeros_like(cond), cond], dim=1) if self.concat_cond else cond)
        feats = []
        zero_t = torch.zeros(cond.shape[0], self.cfg.time_dim, dtype=cond.dtype)
        for blocks, down in zip(self.enc_blocks, self.downs):
            for block in blocks:
                h = block(h, zero_t)
            feats.append(h)
            h = down(h)
        return feats

    def forward(self, x, t, cond=None):
        if x.ndim != 4 or x.shape[1] != self.in_ch or tuple(x.shape[2:]) != self.image_shape:
            raise ValueError(f"expected input (B, {self.in_ch}, {self.image_shape[0]}, {self.image_shape[1]}), got {tuple(x.shape)}")
        t = torch.as_tensor(t).reshape(-1)
        if t.numel() == 1:
            t = t.expand(x.shape[0])
        temb = self.time_embed(t)
        ctx = None
        if self.conditional:
            if cond is None or tuple(cond.shape) != tuple(x.shape):
                raise ValueError("conditional net needs a condition of the same shape as the input")
            ctx = self._encode_condition(cond)

        h = self.conv_in(torch.cat([x, cond], dim=1) if self.concat_cond else x)
        skips = []
        for lvl, blocks in enumerate(self.enc_blocks):
            for block in blocks:
                h = block(h, temb)
            h = self.enc_sa[lvl](h)
            if ctx is not None and self.enc_ca[lvl] is not None:
                h = self.enc_ca[lvl](h, ctx[lvl])
            skips.append(h)
            h = self.downs[lvl](h)

        h = self.mid1(h, temb)
        h = self.mid_sa(h)
        if ctx is not None and self.mid_ca is not None:
            h = self.mid_ca(h, ctx[-1])
        h = self.mid2(h, temb)

        n = len(self.dec_blocks)
        for i, blocks in enumerate(self.dec_blocks):
            lvl = n - 1 - i
            h = torch.cat([h, skips[lvl]], dim=1)
            for block in blocks:
                h = block(h, temb)
            h = self.dec_sa[i](h)
            if ctx is not None and self.dec_ca[i] is not None:
                h = self.dec_ca[i](h, ctx[lvl])
            h = self.ups[i](h)

        return self.conv_out(F.silu(self.norm_out(h)))


class CCMDMNet(_UNet):
    """Noise predictor over the stacked Jack/Alice pair image ``(2, 2M, K)``."""

    variant = "ccmdm"

    def __init__(self, cfg: NetConfig, image_shape: tuple[int, int]):
        super().__init__(cfg, image_shape, conditional=False)

    def forward(self, x, t, cond=None):
        return super().forward(x, t)


class CADMNet(_UNet):
    """Noise predictor over Alice's image ``(2, M, K)`` conditioned on Jack's via cross-attention."""

    variant = "cadm"

    def __init__(self, cfg: NetConfig, image_shape: tuple[int, int]):
        super().__init__(cfg, image_shape, conditional=True)


def build_net(variant: str, cfg: NetConfig, image_shape, dtype=torch.float32, seed: int | None = None):
    """Construct a denoiser; ``image_shape`` is the spatial shape the net sees."""
    cls = {"ccmdm": CCMDMNet, "cadm": CADMNet}.get(variant)
    if cls is None:
        raise ValueError(f"unknown variant {variant!r}")
    net = cls(cfg, tuple(image_shape))
    gen = None
    if seed is not None:
        gen = torch.Generator().manual_seed(int(seed))
    net.reset_parameters(gen)
    return net.to(dtype)


def _as_tensor(x, dtype):
    if isinstance(x, torch.Tensor):
        return x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def forward_ccmdm_net(net: CCMDMNet, pair_t, t):
    """Predicted noise for a (batch of) pair image(s); numpy in, numpy out."""
    dtype = next(net.parameters()).dtype
    x = _as_tensor(pair_t, dtype)
    single = x.ndim == 3
    if single:
        x = x[None]
    with torch.no_grad():
        out = net(x, torch.as_tensor(np.atleast_1d(t)))
    out = out.numpy()
    return out[0] if single else out


def forward_cadm_net(net: CADMNet, h_t, t, jack):
    dtype = next(net.parameters()).dtype
    x = _as_tensor(h_t, dtype)
    c = _as_tensor(jack, dtype)
    single = x.ndim == 3
    if single:
        x, c = x[None], c[None]
    with torch.no_grad():
        out = net(x, torch.as_tensor(np.atleast_1d(t)), c)
    out = out.numpy()
    return out[0] if single else out
