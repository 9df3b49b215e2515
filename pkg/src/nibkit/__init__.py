"""Noise Incentive Block toolkit: flatness-degradation analysis and neural dithering."""

__version__ = "0.1.0"
