"""Counterfactual contrastive sample construction and training for
egocentric video QA at desk scale."""

__version__ = "0.1.0"
