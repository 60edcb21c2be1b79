"""Distributed multi-agent coverage driven by locally solved heat fields."""

__version__ = "0.1.0"
