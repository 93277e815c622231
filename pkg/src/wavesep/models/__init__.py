"""Separation architectures."""
from .convtasnet import ConvTasnet, ConvTasnetSpec, build_convtasnet, check_equivariance
from .demucs import (Demucs, DemucsSpec, build_demucs, encoder_signal_ratio, rescale_weights,
                     valid_length)

__all__ = ["ConvTasnet", "ConvTasnetSpec", "build_convtasnet", "check_equivariance", "Demucs",
           "DemucsSpec", "build_demucs", "encoder_signal_ratio", "rescale_weights", "valid_length"]
