"""Spiking neural networks with cross-modality attention for event/frame fusion."""

__version__ = "0.1.0"
