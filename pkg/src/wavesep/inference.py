"""Whole-track separation: fixed-size chunking and randomized shift stabilization."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .autodiff import Tensor, no_grad
from .data import SOURCES, SourceSet
from .dsp import Waveform, load_wav, save_wav
from .models.convtasnet import ConvTasnet
from .models.io import load_model


def _run(model, mixture: np.ndarray) -> np.ndarray:
    """``(C, T)`` mixture to ``(S, C, T)`` estimates, without recording a tape."""
    dtype = model.parameters()[0].data.dtype
    with no_grad():
        out = model(Tensor(np.asarray(mixture, dtype=dtype)[None]))
    return out.data[0]


def _source_set(model, estimates: np.ndarray, sample_rate: int) -> SourceSet:
    names = SOURCES if len(SOURCES) == model.spec.sources else \
        tuple(f"source{i}" for i in range(model.spec.sources))
    return SourceSet({n: estimates[i] for i, n in enumerate(names)}, sample_rate)


def chunked_forward(model, mixture: np.ndarray, chunk: int) -> np.ndarray:
    """Run ``model`` on consecutive non-overlapping chunks and concatenate the outputs."""
    length = mixture.shape[-1]
    if length == 0:
        raise ValueError("cannot separate an empty track")
    if chunk <= 0:
        raise ValueError("chunk length must be positive")
    n_chunks = -(-length // chunk)
    padded = np.zeros((mixture.shape[0], n_chunks * chunk), dtype=mixture.dtype)
    padded[:, :length] = mixture
    pieces = [_run(model, padded[:, i * chunk:(i + 1) * chunk]) for i in range(n_chunks)]
    return np.concatenate(pieces, axis=-1)[..., :length]


def model_forward(model, mixture: np.ndarray, sample_rate: int, chunk_seconds: float = 8.0) -> np.ndarray:
    """Full-track forward: Conv-Tasnet runs chunked, Demucs on the whole track."""
    if isinstance(model, ConvTasnet):
        return chunked_forward(model, mixture, int(round(chunk_seconds * sample_rate)))
    if mixture.shape[-1] == 0:
        raise ValueError("cannot separate an empty track")
    return _run(model, mixture)


def separate_chunked(model, track: Waveform, chunk_seconds: float = 8.0) -> SourceSet:
    if chunk_seconds <= 0:
        raise ValueError("chunk_seconds must be positive")
    chunk = int(round(chunk_seconds * track.sample_rate))
    return _source_set(model, chunked_forward(model, track.samples, chunk), track.sample_rate)


def draw_shifts(num_shifts: int, max_shift_seconds: float, sample_rate: int, seed) -> list[int]:
    if num_shifts < 1:
        raise ValueError("num_shifts must be at least 1")
    high = max(1, int(round(max_shift_seconds * sample_rate)))
    return [int(d) for d in np.random.default_rng(seed).integers(0, high, size=num_shifts)]


def shift_stabilize(model, x: Waveform, num_shifts: int = 10, max_shift_seconds: float = 0.5,
                    seed=0, shifts: list[int] | None = None,
                    chunk_seconds: float = 8.0) -> SourceSet:
    """Average the outputs over ``num_shifts`` front-padded copies of the input.

    Each copy gets ``d`` leading zeros; the first ``d`` output samples are
    dropped so every output is aligned with the input. ``shifts`` overrides
    the random draw.
    """
    if shifts is None:
        shifts = draw_shifts(num_shifts, max_shift_seconds, x.sample_rate, seed)
    if not shifts:
        raise ValueError("at least one shift is needed")
    length = x.length
    total = None
    for d in shifts:
        shifted = np.concatenate([np.zeros((x.channels, d), dtype=x.samples.dtype), x.samples], axis=1)
        out = model_forward(model, shifted, x.sample_rate, chunk_seconds)[..., d:d + length]
        total = out.astype(np.float64) if total is None else total + out
    mean = (total / len(shifts)).astype(x.samples.dtype)
    return _source_set(model, mean, x.sample_rate)


def separate_waveform(model, x: Waveform, shifts: int = 0, seed=0,
                      max_shift_seconds: float = 0.5) -> SourceSet:
    """Plain forward when ``shifts`` is 0, otherwise shift-stabilized."""
    if shifts:
        return shift_stabilize(model, x, shifts, max_shift_seconds, seed)
    return _source_set(model, model_forward(model, x.samples, x.sample_rate), x.sample_rate)


def separate(kind: str, checkpoint, input_path, out_dir, shifts: int = 0, seed=0,
             max_shift_seconds: float = 0.5, encoding: str = "float32") -> dict[str, Path]:
    """Separate one WAV file into one WAV file per source in ``out_dir``."""
    model = load_model(checkpoint, expected_kind=kind)
    x = load_wav(input_path)
    if x.channels != model.spec.audio_channels:
        raise ValueError(f"model expects {model.spec.audio_channels} channel(s), "
                         f"input has {x.channels}")
    estimates = separate_waveform(model, Waveform(x.samples.astype(np.float32), x.sample_rate),
                                  shifts, seed, max_shift_seconds)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in estimates.names:
        paths[name] = out_dir / f"{name}.wav"
        save_wav(estimates.waveform(name), paths[name], encoding)
    return paths
