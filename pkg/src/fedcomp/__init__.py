"""Federated multi-agent actor-critic for CoMP clustering."""

__version__ = "0.1.0"
