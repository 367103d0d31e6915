"""Guided attention-LSTM caption generation with discriminative supervision."""

__version__ = "0.1.0"
