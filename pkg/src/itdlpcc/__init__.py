"""Learned block-based point cloud geometry (and colour) codec toolkit."""

__version__ = "0.1.0"
