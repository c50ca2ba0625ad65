"""Semi-supervised video object segmentation: per-object tracklets that score their own masks and switch box strategies accordingly."""

__version__ = "0.1.0"
