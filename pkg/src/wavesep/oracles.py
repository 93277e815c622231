"""Ideal ratio / binary mask oracles applied to the mixture STFT (mixture phase kept)."""
from __future__ import annotations

import numpy as np

from .data import SourceSet
from .dsp import ComplexSpectrogram, istft, stft


def _source_spectra(references: SourceSet, window_length: int, hop: int) -> np.ndarray:
    return np.stack([stft(references.sources[n], window_length, hop).complex
                     for n in references.names])  # (S, C, F, M)


def ratio_masks(magnitudes: np.ndarray, exponent: float = 2.0) -> np.ndarray:
    """``|S_s|^e / sum_k |S_k|^e``; bins where every source is zero get ``1/S``."""
    power = magnitudes ** exponent
    total = power.sum(axis=0, keepdims=True)
    uniform = np.full_like(power, 1.0 / power.shape[0])
    return np.where(total > 0, power / np.where(total > 0, total, 1.0), uniform)


def binary_masks(magnitudes: np.ndarray) -> np.ndarray:
    """One-hot masks on the loudest source per bin; ties go to the lowest index."""
    winner = np.argmax(magnitudes, axis=0)  # argmax returns the first maximum
    return (np.arange(magnitudes.shape[0]).reshape((-1,) + (1,) * winner.ndim)
            == winner[None]).astype(np.float64)


def _apply(masks: np.ndarray, references: SourceSet, mixture: np.ndarray,
           window_length: int, hop: int) -> SourceSet:
    mix_spec = stft(mixture, window_length, hop).complex
    length = mixture.shape[-1]
    out = {}
    for s, name in enumerate(references.names):
        masked = ComplexSpectrogram.from_complex(masks[s] * mix_spec, window_length, hop)
        out[name] = istft(masked, hop, length, references.sample_rate).samples
    return SourceSet(out, references.sample_rate, np.asarray(mixture))


def irm_oracle(references: SourceSet, mixture: np.ndarray | None = None, window_length: int = 4096,
               hop: int = 1024, exponent: float = 2.0) -> SourceSet:
    mixture = references.stem_sum() if mixture is None else mixture
    spectra = _source_spectra(references, window_length, hop)
    return _apply(ratio_masks(np.abs(spectra), exponent), references, mixture, window_length, hop)


def ibm_oracle(references: SourceSet, mixture: np.ndarray | None = None, window_length: int = 4096,
               hop: int = 1024) -> SourceSet:
    mixture = references.stem_sum() if mixture is None else mixture
    spectra = _source_spectra(references, window_length, hop)
    return _apply(binary_masks(np.abs(spectra)), references, mixture, window_length, hop)
