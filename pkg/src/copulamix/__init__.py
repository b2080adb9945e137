"""Copula algebra, perturbation families and mixing coefficients for copula-based Markov chains."""

__version__ = "0.1.0"
