"""Excitation-number statistics of the mean-field Bose gas in a truncated Fock space."""

__version__ = "0.1.0"
