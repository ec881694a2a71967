"""Numerical solver for the extended Bogomolny equations on C x R+ with nilpotent Higgs field."""

__version__ = "0.1.0"
