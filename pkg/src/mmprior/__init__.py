"""Flows and VAEs with fixed multimodal priors for out-of-distribution likelihood studies."""

__version__ = "0.1.0"
