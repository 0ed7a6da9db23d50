"""Heatmap-guided positional embeddings for query-based small-object detection."""

__version__ = "0.1.0"
