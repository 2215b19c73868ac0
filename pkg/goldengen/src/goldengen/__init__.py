"""Golden-corpus generator for resampler conformance testing."""

__version__ = "0.1.0"
