"""Tri-modal (netlist / caption / image-feature) circuit retrieval."""

__version__ = "0.1.0"
