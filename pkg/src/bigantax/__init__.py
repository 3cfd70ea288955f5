"""BiGAN-based outlier detection for monthly tax-return data."""

__version__ = "0.1.0"
