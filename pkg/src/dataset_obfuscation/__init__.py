"""Gaussian dataset obfuscation, deterministic training, model divergence and
Proof-of-Learning replay, with desk-scale experiment runners."""

__version__ = "0.1.0"
