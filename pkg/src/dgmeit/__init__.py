"""Electrical impedance tomography with classical and generative reconstruction."""

__version__ = "0.1.0"
