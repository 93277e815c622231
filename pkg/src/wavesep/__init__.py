"""Waveform-domain music source separation: Demucs and Conv-Tasnet from scratch."""

__version__ = "0.1.0"
