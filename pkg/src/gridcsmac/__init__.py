"""Compressed-sensing data reporting with an optimised slotted CSMA/CA MAC for
smart-grid sensor groups."""

__version__ = "0.1.0"
