"""Dominant-term operation counts of the two denoisers."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class FlopModel:
    """``spatial`` is S_max (pair image, H*2W) for CCMDM or S~_max (H*W per branch) for CADM."""

    T: int
    B: int
    L: int
    n_r: int
    C_max: int
    spatial: int

    def __post_init__(self):
        for name in ("T", "B", "L", "n_r", "C_max", "spatial"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def flop_estimate(model: FlopModel, variant: str) -> int:
    """``T B L n_r (C^2 S + S^2 C)`` for CCMDM, ``T B L n_r (2 C^2 S + 4 S^2 C)`` for CADM."""
    pre = model.T * model.B * model.L * model.n_r
    c, s = model.C_max, model.spatial
    if variant == "ccmdm":
        return pre * (c * c * s + s * s * c)
    if variant == "cadm":
        return pre * (2 * c * c * s + 4 * s * s * c)
    raise ValueError(f"unknown variant {variant!r}")
