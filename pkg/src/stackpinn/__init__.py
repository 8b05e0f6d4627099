"""Stacked multifidelity finite-basis PINNs with time-domain decomposition."""

__version__ = "0.1.0"
