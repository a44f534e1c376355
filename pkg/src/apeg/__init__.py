"""Collaborator-assisted CSI fingerprint generation with diffusion models, and
rank-based physical-layer authentication on top of it."""

__version__ = "0.1.0"
