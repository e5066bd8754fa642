"""Gaussian-process wind-power forecasting with stationary and generalized spectral mixture kernels."""

__version__ = "0.1.0"
