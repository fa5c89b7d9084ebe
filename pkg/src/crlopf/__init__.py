"""Constrained reinforcement learning for multi-period AC optimal power flow with storage."""

__version__ = "0.1.0"
