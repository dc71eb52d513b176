"""Hierarchical multi-agent orchestration framework."""

__version__ = "0.1.0"
