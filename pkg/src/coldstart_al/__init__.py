"""Pool-based active learning with optional self-supervised pre-training."""

__version__ = "0.1.0"
