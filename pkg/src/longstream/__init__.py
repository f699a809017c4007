"""Streaming interactive generation engine with sink-pinned windowed KV caching."""

__version__ = "0.1.0"
