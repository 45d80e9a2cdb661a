"""Class-based styling: per-class style transfer driven by lightweight segmentation."""

__version__ = "0.1.0"
