"""Variance-reduced stochastic gradient Langevin dynamics and its verification harness."""

__version__ = "0.1.0"
