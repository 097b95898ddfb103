"""Neural module network re-ranking for natural-language code search."""

__version__ = "0.1.0"
