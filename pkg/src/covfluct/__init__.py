"""Entry fluctuations of functions of sample covariance matrices."""

__version__ = "0.1.0"
