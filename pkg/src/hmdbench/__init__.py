"""Desk-scale benchmark for hardware-counter malware detectors."""

__version__ = "0.1.0"
