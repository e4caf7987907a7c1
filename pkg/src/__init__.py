"""
Temporal Stochastic Splitting

Lie-Trotter product formulas for linear stochastic differential equations, the spectral
stochastic Schroedinger grid, GRW and QMUPL collapse models, and the experiment harness
that runs them in-process or on a Temporal worker.
"""

__version__ = "0.1.0"
