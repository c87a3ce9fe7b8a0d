"""Polarization-mode-dispersion emulation and entanglement infidelity analysis."""

__version__ = "0.1.0"
