"""Deterministic simulator for CAIF devices, their ideal functionality and
the remote-execution protocols built on them."""

__version__ = "0.1.0"
