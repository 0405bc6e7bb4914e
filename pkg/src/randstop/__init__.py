"""Optimal stopping versus randomized stopping: exact tree computations,
constructive de-randomization, and Monte Carlo for controlled diffusions."""

__version__ = "0.1.0"
