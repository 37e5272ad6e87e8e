"""Spatio-temporal demand forecasting: 3-D CNNs, Bayesian hyperparameter search and baselines."""

__version__ = "0.1.0"
