"""Frustrated spin chains: chirality, energies, minimizers and optimal transition profiles."""

__version__ = "0.1.0"
