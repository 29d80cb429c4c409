"""Desk-scale simulator of a programmable Fermi-Hubbard quantum processor."""

__version__ = "0.1.0"
