"""Universal hypernetwork: descriptor-conditioned weight generation."""

__version__ = "0.1.0"
