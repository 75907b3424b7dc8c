"""Incremental confidence-guided joint camera pose and radiance field optimization."""

__version__ = "0.1.0"
