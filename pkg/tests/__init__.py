"""
Test package for the stochastic splitting engine and experiment harness.
"""