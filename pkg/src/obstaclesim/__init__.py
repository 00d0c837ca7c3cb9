"""Finite-volume simulator and verification harness for penalized obstacle
problems driven by conservative multiplicative noise on the 1-D torus."""

__version__ = "0.1.0"
