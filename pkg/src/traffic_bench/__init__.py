"""Benchmark harness for univariate network-traffic forecasting."""

__version__ = "0.1.0"
