"""Disentangled causal-effect VAEs for counterfactual fairness on tabular data."""

__version__ = "0.1.0"
