"""LR-only super-resolution training: pseudo-pair pipelines, a lightweight
windowed-attention SR model, Pillow-compatible resampling and Y-channel metrics."""

__version__ = "0.1.0"
