"""Adversarial training lab: autodiff, MLPs, PGD attacks, robust objectives and a risk oracle."""

__version__ = "0.1.0"
