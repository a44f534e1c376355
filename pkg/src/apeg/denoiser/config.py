"""Network hyperparameters for the noise-prediction U-Nets."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field


@dataclass(frozen=True)
class NetConfig:
    """Shape of a U-shaped noise predictor.

    ``channel_mults[l] * base_channels`` is the width of level ``l``; one
    stride-2 downsampling separates consecutive levels. ``self_attn[l]``
    switches self-attention on for that level; ``cross_attn[l]`` does the same
    for cross-attention onto the condition encoder (CADM only). A single bool
    for ``cross_attn`` applies to every level. The bottleneck always carries
    self-attention, and cross-attention whenever any level does.
    ``cond_concat`` additionally stacks the condition onto the CADM input
    channels, which gives the first convolution pixel-aligned access to it.
    """

    base_channels: int = 16
    channel_mults: tuple[int, ...] = (1, 2, 2)
    resnet_blocks: int = 1
    self_attn: tuple[bool, ...] = (False, False, True)
    # full-resolution cross-attention is ~70% of a desk training step on CPU
    cross_attn: bool | tuple[bool, ...] = (False, True, True)
    heads: int = 4
    time_embed_mult: int = 4
    dropout: float = 0.1
    share_cond_encoder: bool = False
    cond_concat: bool = True

    def __post_init__(self):
        object.__setattr__(self, "channel_mults", tuple(int(p) for p in self.channel_mults))
        object.__setattr__(self, "self_attn", tuple(bool(a) for a in self.self_attn))
        ca = self.cross_attn
        if isinstance(ca, (bool, int)):
            ca = (bool(ca),) * len(self.channel_mults)
        object.__setattr__(self, "cross_attn", tuple(bool(a) for a in ca))
        if self.base_channels < 1 or self.resnet_blocks < 1 or self.time_embed_mult < 1:
            raise ValueError("base_channels, resnet_blocks and time_embed_mult must be >= 1")
        if not self.channel_mults:
            raise ValueError("at least one level is required")
        if len(self.self_attn) != len(self.channel_mults):
            raise ValueError("self_attn needs one flag per level")
        if len(self.cross_attn) != len(self.channel_mults):
            raise ValueError("cross_attn needs one flag per level")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.heads < 1:
            raise ValueError("heads must be >= 1")
        for width in self.widths:
            if width % self.heads:
                raise ValueError(f"heads={self.heads} does not divide channel width {width}")

    @property
    def num_levels(self) -> int:
        return len(self.channel_mults)

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(self.base_channels * p for p in self.channel_mults)

    @property
    def any_cross_attn(self) -> bool:
        return any(self.cross_attn)

    @property
    def time_dim(self) -> int:
        return self.base_channels * self.time_embed_mult

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channel_mults"] = list(self.channel_mults)
        d["self_attn"] = list(self.self_attn)
        d["cross_attn"] = list(self.cross_attn)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown NetConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def desk_preset(**overrides) -> NetConfig:
    return dataclasses.replace(NetConfig(), **overrides)


def paper_preset(**overrides) -> NetConfig:
    # Table-II sized model: C_b=64, mults (1,2,4,4), attention at first/last level.
    # Two residual blocks per level gives 17 convolutions per encoder branch.
    cfg = NetConfig(
        base_channels=64,
        channel_mults=(1, 2, 4, 4),
        resnet_blocks=2,
        self_attn=(True, False, False, True),
        cross_attn=True,
        heads=4,
        time_embed_mult=4,
        dropout=0.1,
        cond_concat=False,  # condition reaches the net through cross-attention only
    )
    return dataclasses.replace(cfg, **overrides)


def tiny_preset(**overrides) -> NetConfig:
    """A few-thousand-parameter net used for gradient checks and unit tests."""
    cfg = NetConfig(
        base_channels=4,
        channel_mults=(1, 1),
        resnet_blocks=1,
        self_attn=(False, True),
        cross_attn=True,
        heads=2,
        time_embed_mult=2,
        dropout=0.0,
    )
    return dataclasses.replace(cfg, **overrides)


PRESETS = {"desk": desk_preset, "paper": paper_preset, "tiny": tiny_preset}
