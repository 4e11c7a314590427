"""Goal-oriented optimal experimental design for linear Bayesian inverse problems."""

__version__ = "0.1.0"
