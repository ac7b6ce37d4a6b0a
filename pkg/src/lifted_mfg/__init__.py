"""Solver and verifier for linear-quadratic mean field games with common noise,
built on lifted (strictly non-anticipative) functionals and their compensators."""

__version__ = "0.1.0"
