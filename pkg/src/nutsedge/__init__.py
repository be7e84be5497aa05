"""Synthetic training data, skeleton label maps and semi-supervised evaluation for nutsedge detection."""

__version__ = "0.1.0"
