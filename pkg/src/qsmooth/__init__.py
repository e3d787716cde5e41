"""Classical and quantum linear-Gaussian filtering and smoothing."""

__version__ = "0.1.0"
