"""Audio containers, WAV I/O, STFT/iSTFT and mel-spectrogram diagnostics.

Array convention: a waveform is ``(channels, time)``; a spectrogram is
``(channels, freq_bins, frames)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

PCM16_SCALE = 32768.0


class WavError(ValueError):
    """Unsupported or unreadable WAV content."""


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2 or samples.shape[0] not in (1, 2):
            raise ValueError(f"waveform must be (1|2, T), got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        self.samples = samples
        self.sample_rate = int(self.sample_rate)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.length / self.sample_rate

    def aligned_with(self, other: "Waveform") -> bool:
        return (self.samples.shape == other.samples.shape
                and self.sample_rate == other.sample_rate)


@dataclass
class ComplexSpectrogram:
    real: np.ndarray
    imag: np.ndarray
    window_length: int
    hop: int
    window: str = "hann"

    @property
    def complex(self) -> np.ndarray:
        return self.real + 1j * self.imag

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.real, self.imag)

    @classmethod
    def from_complex(cls, z: np.ndarray, window_length: int, hop: int) -> "ComplexSpectrogram":
        return cls(np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag), window_length, hop)


def load_wav(path) -> Waveform:
    path = Path(path)
    try:
        sample_rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:  # scipy raises ValueError/struct errors on bad headers
        raise WavError(f"cannot read {path}: {exc}") from exc
    if data.ndim == 1:
        data = data[:, None]
    if data.shape[1] == 0:
        raise WavError(f"{path}: zero channels")
    if data.shape[1] > 2:
        raise WavError(f"{path}: {data.shape[1]} channels, only mono/stereo supported")
    if data.dtype == np.int16:
        samples = data.T.astype(np.float32) / np.float32(PCM16_SCALE)
    elif data.dtype == np.float32:
        samples = data.T.copy()
    else:
        raise WavError(f"{path}: unsupported sample encoding {data.dtype}")
    return Waveform(np.ascontiguousarray(samples), sample_rate)


def save_wav(w: Waveform, path, encoding: str = "float32") -> None:
    """Write ``w`` as RIFF little-endian WAV, ``pcm16`` or IEEE ``float32``.

    pcm16 clamps to ``[-1, 1 - 1/32768]`` so that -1.0 round-trips exactly.
    """
    samples = np.asarray(w.samples)
    if encoding == "float32":
        data = samples.astype(np.float32).T
    elif encoding == "pcm16":
        scaled = np.round(samples.astype(np.float64) * PCM16_SCALE)
        data = np.clip(scaled, -32768, 32767).astype(np.int16).T
    else:
        raise ValueError(f"unknown encoding {encoding!r}, expected pcm16 or float32")
    if data.shape[0] == 0:
        data = data.reshape(0, samples.shape[0])
    try:
        wavfile.write(Path(path), w.sample_rate, np.ascontiguousarray(data))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def hann_window(length: int) -> np.ndarray:
    # periodic Hann: satisfies COLA exactly for hop = length / 4
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def _check_frame_params(window_length: int, hop: int) -> None:
    if window_length <= 0:
        raise ValueError("window_length must be positive")
    if hop <= 0:
        raise ValueError("hop must be positive")
    if hop > window_length:
        raise ValueError("hop must not exceed window_length")


def _frame_count(length: int, window_length: int, hop: int) -> int:
    padded = length + 2 * (window_length // 2)
    return 1 + max(0, padded - window_length) // hop


def stft(w, window_length: int = 4096, hop: int = 1024) -> ComplexSpectrogram:
    """Centered STFT with a Hann window and reflection padding of ``window_length // 2``.

    ``w`` is a :class:`Waveform` or a ``(channels, time)`` array.
    """
    _check_frame_params(window_length, hop)
    x = w.samples if isinstance(w, Waveform) else np.atleast_2d(np.asarray(w))
    x = np.asarray(x, dtype=np.float64)
    pad = window_length // 2
    if x.shape[-1] > pad:
        padded = np.pad(x, ((0, 0), (pad, pad)), mode="reflect")
    else:
        # reflection needs at least pad + 1 samples
        padded = np.pad(x, ((0, 0), (pad, pad)), mode="constant")
    frames = _frame_count(x.shape[-1], window_length, hop)
    needed = (frames - 1) * hop + window_length
    if padded.shape[-1] < needed:
        padded = np.pad(padded, ((0, 0), (0, needed - padded.shape[-1])))
    idx = np.arange(window_length)[None, :] + hop * np.arange(frames)[:, None]
    segments = padded[:, idx] * hann_window(window_length)
    spec = np.fft.rfft(segments, axis=-1)  # (C, M, F)
    return ComplexSpectrogram.from_complex(np.swapaxes(spec, 1, 2), window_length, hop)


def istft(s: ComplexSpectrogram, hop: int | None = None, target_length: int | None = None,
          sample_rate: int = 1) -> Waveform:
    """Weighted overlap-add inverse of :func:`stft`, trimmed/padded to ``target_length``."""
    hop = s.hop if hop is None else hop
    n = s.window_length
    _check_frame_params(n, hop)
    z = s.complex
    if z.ndim != 3 or z.shape[1] != n // 2 + 1:
        raise ValueError(f"spectrogram has {z.shape[1] if z.ndim == 3 else '?'} bins, "
                         f"expected {n // 2 + 1} for window {n}")
    channels, _, frames = z.shape
    segments = np.fft.irfft(np.swapaxes(z, 1, 2), n=n, axis=-1)  # (C, M, n)
    window = hann_window(n)
    total = (frames - 1) * hop + n
    out = np.zeros((channels, total))
    norm = np.zeros(total)
    for m in range(frames):
        out[:, m * hop:m * hop + n] += segments[:, m] * window
        norm[m * hop:m * hop + n] += window ** 2
    nonzero = norm > 1e-10
    out[:, nonzero] /= norm[nonzero]
    pad = n // 2
    out = out[:, pad:]
    if target_length is None:
        target_length = max(0, total - 2 * pad)
    if out.shape[1] >= target_length:
        out = out[:, :target_length]
    else:
        out = np.pad(out, ((0, 0), (0, target_length - out.shape[1])))
    return Waveform(out, sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, window_length: int, sample_rate: int) -> np.ndarray:
    """Triangular HTK-scale filters over ``[0, sr/2]``, shape ``(n_mels, F)``, peak 1."""
    n_bins = window_length // 2 + 1
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if n_mels > n_bins:
        raise ValueError(f"n_mels={n_mels} exceeds the {n_bins} frequency bins")
    freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_spectrogram(w: Waveform, n_mels: int = 64, window_length: int = 2048,
                    hop: int = 512) -> np.ndarray:
    """Log-compressed mel power spectrogram ``log(1 + M)`` averaged over channels."""
    bank = mel_filterbank(n_mels, window_length, w.sample_rate)
    power = stft(w, window_length, hop).magnitude ** 2
    mel = np.einsum("mf,cft->mt", bank, power) / power.shape[0]
    return np.log1p(mel)


def write_text_grid(matrix: np.ndarray, path) -> None:
    """Dump a 2-D array as ``rows cols`` followed by space-separated rows."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    rows, cols = matrix.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{rows} {cols}\n")
        for row in matrix:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_text_grid(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        rows, cols = (int(v) for v in fh.readline().split())
        data = [[float(v) for v in line.split()] for line in fh if line.strip()]
    out = np.array(data, dtype=np.float64).reshape(rows, cols)
    return out
