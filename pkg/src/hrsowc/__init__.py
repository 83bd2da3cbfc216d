"""Hierarchical rate splitting for multi-AP optical wireless downlinks."""
__version__ = "0.1.0"
