"""Synthetic multi-stem tracks, MusDB-style directories, epoch sampler and augmentation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .dsp import Waveform, load_wav, save_wav

log = logging.getLogger(__name__)

SOURCES = ("drums", "bass", "other", "vocals")
SPLITS = ("train", "valid", "test")


class DatasetError(ValueError):
    pass


@dataclass
class SourceSet:
    """Aligned stems keyed by source name, plus an optional mixture."""

    sources: dict[str, np.ndarray]
    sample_rate: int
    mixture: np.ndarray | None = None

    def __post_init__(self):
        shapes = {name: np.shape(x) for name, x in self.sources.items()}
        if len(set(shapes.values())) > 1:
            raise DatasetError(f"misaligned stems: {shapes}")
        if self.mixture is not None and self.sources:
            if np.shape(self.mixture) != next(iter(shapes.values())):
                raise DatasetError("mixture is not aligned with the stems")

    @property
    def names(self) -> list[str]:
        return list(self.sources)

    @property
    def length(self) -> int:
        return next(iter(self.sources.values())).shape[-1]

    def stacked(self) -> np.ndarray:
        """``(S, C, T)`` array in source order."""
        return np.stack([self.sources[name] for name in self.sources])

    def stem_sum(self) -> np.ndarray:
        return np.sum(self.stacked(), axis=0)

    def mixture_error(self) -> float:
        if self.mixture is None:
            return 0.0
        return float(np.max(np.abs(self.stem_sum() - self.mixture), initial=0.0))

    def waveform(self, name: str) -> Waveform:
        data = self.mixture if name == "mixture" else self.sources[name]
        return Waveform(data, self.sample_rate)

    def crop(self, start: int, length: int) -> "SourceSet":
        mix = None if self.mixture is None else self.mixture[:, start:start + length].copy()
        return SourceSet({k: v[:, start:start + length].copy() for k, v in self.sources.items()},
                         self.sample_rate, mix)


# ----------------------------------------------------------------------------
# synthesis
# ----------------------------------------------------------------------------

def _adsr(n: int, sr: int, attack: float, release: float) -> np.ndarray:
    env = np.ones(n)
    a = max(1, int(attack * sr))
    r = max(1, int(release * sr))
    env[:a] = np.linspace(0.0, 1.0, a)[:n]
    if r < n:
        env[-r:] *= np.linspace(1.0, 0.0, r)
    return env


def _pan(rng: np.random.Generator, mono: np.ndarray, stereo: bool) -> np.ndarray:
    if not stereo:
        return mono[None, :]
    p = rng.uniform(0.25, 0.75)
    return np.stack([np.sqrt(1 - p) * mono, np.sqrt(p) * mono])


def _drums(rng, n, sr):
    out = np.zeros(n)
    step = int(rng.uniform(0.18, 0.3) * sr)
    t = int(rng.uniform(0, 0.1) * sr)
    while t < n:
        kind = rng.random()
        length = min(n - t, int(0.25 * sr))
        tt = np.arange(length) / sr
        if kind < 0.35:   # kick-like thump
            body = np.sin(2 * np.pi * (60 + 90 * np.exp(-tt * 30)) * tt) * np.exp(-tt * 18)
            hit = 0.9 * body + 0.2 * rng.standard_normal(length) * np.exp(-tt * 60)
        else:             # snare / hat-like noise burst
            decay = rng.uniform(25, 60)
            hit = rng.standard_normal(length) * np.exp(-tt * decay)
        out[t:t + length] += rng.uniform(0.5, 1.0) * hit
        t += step if rng.random() < 0.8 else step // 2
    return out


def _bass(rng, n, sr):
    out = np.zeros(n)
    t = 0
    while t < n:
        length = min(n - t, int(rng.uniform(0.25, 0.6) * sr))
        f0 = rng.uniform(40, 120)
        tt = np.arange(length) / sr
        note = np.sin(2 * np.pi * f0 * tt) + 0.3 * np.sin(4 * np.pi * f0 * tt)
        out[t:t + length] = note * _adsr(length, sr, 0.01, 0.05)
        t += length
    return out


def _other(rng, n, sr):
    out = np.zeros(n)
    t = 0
    while t < n:
        length = min(n - t, int(rng.uniform(0.5, 1.2) * sr))
        root = rng.uniform(250, 500)
        tt = np.arange(length) / sr
        chord = sum(np.sin(2 * np.pi * root * r * tt + rng.uniform(0, 2 * np.pi))
                    for r in (1.0, 1.26, 1.5))
        chord += 0.3 * np.sin(2 * np.pi * 2 * root * tt)
        out[t:t + length] = chord * _adsr(length, sr, 0.05, 0.1) / 3
        t += length
    return out


def _vocals(rng, n, sr):
    out = np.zeros(n)
    t = 0
    rested = True
    while t < n:
        length = min(n - t, int(rng.uniform(0.3, 0.8) * sr))
        if not rested and rng.random() < 0.2:
            # short rest between phrases, never two in a row
            t += int(rng.uniform(0.1, 0.4) * sr)
            rested = True
            continue
        rested = False
        f0 = rng.uniform(500, 900)
        tt = np.arange(length) / sr
        vib = 1 + 0.03 * np.sin(2 * np.pi * rng.uniform(4.5, 6.5) * tt)
        phase = 2 * np.pi * np.cumsum(f0 * vib) / sr
        note = np.zeros(length)
        for h in range(1, 6):
            if h * f0 * 1.05 >= sr / 2:
                break
            freq = h * f0
            # formant-like emphasis around 1.2 kHz and 2.6 kHz
            gain = np.exp(-((freq - 1200) / 500) ** 2) + 0.6 * np.exp(-((freq - 2600) / 600) ** 2) + 0.15
            note += gain * np.sin(h * phase)
        out[t:t + length] = note * _adsr(length, sr, 0.03, 0.08)
        t += length
    return out


_GENERATORS = {"drums": _drums, "bass": _bass, "other": _other, "vocals": _vocals}


def synth_track(seed: int, duration_s: float = 30.0, sample_rate: int = 8000,
                stereo: bool = True) -> SourceSet:
    """Deterministic four-stem track whose mixture is the exact stem sum (peak <= 0.9)."""
    if duration_s < 1.0:
        raise ValueError("duration must be at least 1 second")
    n = int(round(duration_s * sample_rate))
    stems = {}
    for index, name in enumerate(SOURCES):
        rng = np.random.default_rng([seed, index])
        mono = _GENERATORS[name](rng, n, sample_rate)
        mono = mono / (np.sqrt(np.mean(mono ** 2)) + 1e-12) * rng.uniform(0.5, 1.0)
        stems[name] = _pan(rng, mono, stereo)
    peak = max(np.max(np.abs(sum(stems.values()))), max(np.max(np.abs(s)) for s in stems.values()))
    scale = 0.9 / peak
    stems = {k: (v * scale).astype(np.float32) for k, v in stems.items()}
    mixture = np.sum(np.stack(list(stems.values())), axis=0, dtype=np.float32)
    # stems in float32 add up to the float32 mixture exactly in this order
    return SourceSet(stems, sample_rate, mixture)


# ----------------------------------------------------------------------------
# directories and manifests
# ----------------------------------------------------------------------------

def save_track_dir(track: SourceSet, path, encoding: str = "float32") -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    mixture = track.mixture if track.mixture is not None else track.stem_sum()
    save_wav(Waveform(mixture, track.sample_rate), path / "mixture.wav", encoding)
    for name, data in track.sources.items():
        save_wav(Waveform(data, track.sample_rate), path / f"{name}.wav", encoding)


def load_track_dir(path, tolerance: float = 1e-3, sources=SOURCES) -> SourceSet:
    path = Path(path)
    files = {"mixture": path / "mixture.wav", **{s: path / f"{s}.wav" for s in sources}}
    for name, file in files.items():
        if not file.exists():
            raise DatasetError(f"{path}: missing stem {name!r} ({file.name})")
    waves = {name: load_wav(file) for name, file in files.items()}
    ref = waves["mixture"]
    for name, w in waves.items():
        if not w.aligned_with(ref):
            raise DatasetError(f"{path}: stem {name!r} is misaligned with the mixture")
    track = SourceSet({s: waves[s].samples for s in sources}, ref.sample_rate, ref.samples)
    err = track.mixture_error()
    if err > tolerance:
        log.warning("%s: mixture differs from stem sum by %.3g", path, err)
    return track


@dataclass
class TrackEntry:
    track_id: str
    split: str
    duration: float
    path: str | None = None
    seed: int | None = None


@dataclass
class DatasetManifest:
    """Track list with splits. Text form: one ``split id duration path=...|seed=...`` per line."""

    entries: list[TrackEntry] = field(default_factory=list)
    root: Path | None = None
    sample_rate: int = 8000

    def __post_init__(self):
        seen: dict[str, str] = {}
        for e in self.entries:
            if e.split not in SPLITS:
                raise DatasetError(f"unknown split {e.split!r}")
            if e.track_id in seen:
                raise DatasetError(f"track {e.track_id!r} listed twice")
            seen[e.track_id] = e.split

    def split(self, name: str) -> list[TrackEntry]:
        return [e for e in self.entries if e.split == name]

    def load(self, entry: TrackEntry) -> SourceSet:
        if entry.path is not None:
            base = self.root if self.root is not None else Path(".")
            return load_track_dir(base / entry.path)
        return synth_track(entry.seed, entry.duration, self.sample_rate)

    def save(self, path) -> None:
        lines = [f"# sample_rate={self.sample_rate}"]
        for e in self.entries:
            where = f"path={e.path}" if e.path is not None else f"seed={e.seed}"
            lines.append(f"{e.split} {e.track_id} {e.duration:g} {where}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        entries = []
        sample_rate = 8000
        for raw in path.read_text(encoding="utf-8").splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "sample_rate=" in line:
                    sample_rate = int(line.split("sample_rate=")[1].split()[0])
                continue
            split, track_id, duration, where = line.split()
            key, _, value = where.partition("=")
            if key == "path":
                entries.append(TrackEntry(track_id, split, float(duration), path=value))
            elif key == "seed":
                entries.append(TrackEntry(track_id, split, float(duration), seed=int(value)))
            else:
                raise DatasetError(f"{path}: bad track location {where!r}")
        return cls(entries, root=path.parent, sample_rate=sample_rate)


def split_counts(n_tracks: int) -> tuple[int, int, int]:
    """70/15/15 split by track order."""
    n_valid = int(round(0.15 * n_tracks))
    n_test = int(round(0.15 * n_tracks))
    return n_tracks - n_valid - n_test, n_valid, n_test


def synth_manifest(n_tracks: int, duration: float, sample_rate: int, seed: int) -> DatasetManifest:
    """In-memory synthetic dataset; track ``i`` uses seed ``seed * 100003 + i``."""
    n_train, n_valid, _ = split_counts(n_tracks)
    entries = []
    for i in range(n_tracks):
        split = "train" if i < n_train else "valid" if i < n_train + n_valid else "test"
        entries.append(TrackEntry(f"track_{i:03d}", split, duration, seed=seed * 100003 + i))
    return DatasetManifest(entries, sample_rate=sample_rate)


def write_synth_dataset(out_dir, n_tracks: int, duration: float, sample_rate: int, seed: int,
                        encoding: str = "float32") -> DatasetManifest:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    memory = synth_manifest(n_tracks, duration, sample_rate, seed)
    entries = []
    for e in memory.entries:
        track = synth_track(e.seed, duration, sample_rate)
        rel = f"tracks/{e.track_id}"
        save_track_dir(track, out_dir / rel, encoding)
        entries.append(TrackEntry(e.track_id, e.split, duration, path=rel))
    manifest = DatasetManifest(entries, root=out_dir, sample_rate=sample_rate)
    manifest.save(out_dir / "manifest.txt")
    return manifest


# ----------------------------------------------------------------------------
# epoch sampler and augmentation
# ----------------------------------------------------------------------------

@dataclass
class Extract:
    track_id: str
    offset: int       # extract start, samples
    shift: int        # random shift inside the extract, samples
    example: SourceSet


def epoch_plan(durations: dict[str, float], sample_rate: int, epoch_index: int, seed: int,
               extract_seconds: float = 11.0, stride_seconds: float = 1.0,
               shift_seconds: float = 1.0) -> list[tuple[str, int, int]]:
    """Shuffled ``(track_id, offset, shift)`` triples covering every eligible offset once."""
    pairs = []
    for track_id, duration in durations.items():
        if duration < extract_seconds:
            log.warning("track %s shorter than %.1f s extract, skipped", track_id, extract_seconds)
            continue
        count = int(np.floor((duration - extract_seconds) / stride_seconds + 1e-9)) + 1
        pairs.extend((track_id, int(round(k * stride_seconds * sample_rate))) for k in range(count))
    rng = np.random.default_rng([seed, epoch_index, 1])
    order = rng.permutation(len(pairs))
    max_shift = int(round(shift_seconds * sample_rate))
    shifts = rng.integers(0, max(1, max_shift), size=len(pairs))
    return [(pairs[i][0], pairs[i][1], int(s)) for i, s in zip(order, shifts)]


def extract_sampler(tracks: dict[str, SourceSet], epoch_index: int, seed: int,
                    extract_seconds: float = 11.0, stride_seconds: float = 1.0,
                    crop_seconds: float = 10.0, shift_seconds: float = 1.0) -> Iterator[Extract]:
    """One epoch of cropped training examples in seeded order."""
    if crop_seconds + shift_seconds > extract_seconds + 1e-9:
        raise ValueError("crop plus shift must fit inside the extract")
    sample_rates = {t.sample_rate for t in tracks.values()}
    if len(sample_rates) != 1:
        raise DatasetError("all tracks must share one sample rate")
    sr = sample_rates.pop()
    durations = {k: t.length / sr for k, t in tracks.items()}
    crop = int(round(crop_seconds * sr))
    for track_id, offset, shift in epoch_plan(durations, sr, epoch_index, seed, extract_seconds,
                                              stride_seconds, shift_seconds):
        example = tracks[track_id].crop(offset + shift, crop)
        yield Extract(track_id, offset, shift, example)


def flip_sign(x: np.ndarray) -> np.ndarray:
    return -x


def swap_channels(x: np.ndarray) -> np.ndarray:
    return x[..., ::-1, :]


def augment_batch(stems: np.ndarray, seed, shuffle: bool = True, p_swap: float = 0.5,
                  p_sign: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Remix a ``(B, S, C, T)`` batch; returns ``(stems, mixture)``.

    Each source slot gets an independent permutation of the batch, then every
    stem is channel-swapped with ``p_swap`` and negated with ``p_sign``. The
    mixture is recomputed from the augmented stems.
    """
    rng = np.random.default_rng(seed)
    batch, n_sources, channels, _ = stems.shape
    out = np.empty_like(stems)
    for s in range(n_sources):
        perm = rng.permutation(batch) if shuffle else np.arange(batch)
        out[:, s] = stems[perm, s]
    swap = rng.random((batch, n_sources)) < p_swap
    sign = rng.random((batch, n_sources)) < p_sign
    for b in range(batch):
        for s in range(n_sources):
            if swap[b, s] and channels == 2:
                out[b, s] = swap_channels(out[b, s])
            if sign[b, s]:
                out[b, s] = flip_sign(out[b, s])
    return out, out.sum(axis=1)
