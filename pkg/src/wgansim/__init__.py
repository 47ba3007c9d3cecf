"""WGAN-based synthesis of tabular causal data and Monte Carlo benchmarking
of average-treatment-effect-on-the-treated estimators."""

__version__ = "0.1.0"
