"""Noise-prediction networks, gradient checking, optimiser, checkpoints and FLOP counts."""

from .config import NetConfig, desk_preset, paper_preset, tiny_preset
from .flops import FlopModel, flop_estimate
from .nets import CADMNet, CCMDMNet, build_net, forward_cadm_net, forward_ccmdm_net
from .optim import Adam, adam_step
from .params import ParamStore, backward

__all__ = ["NetConfig", "desk_preset", "paper_preset", "tiny_preset", "FlopModel", "flop_estimate",
           "CADMNet", "CCMDMNet", "build_net", "forward_cadm_net", "forward_ccmdm_net", "Adam",
           "adam_step", "ParamStore", "backward"]
