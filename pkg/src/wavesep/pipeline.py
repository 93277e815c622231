"""End-to-end evaluation helpers: model, mixture-baseline and oracle reports over a split."""
from __future__ import annotations

from pathlib import Path
from typing import Callable

import numpy as np

from .data import DatasetManifest, SourceSet, load_track_dir
from .dsp import Waveform, load_wav
from .inference import separate_waveform
from .metrics import EvalReport, evaluate_track
from .oracles import ibm_oracle, irm_oracle

Estimator = Callable[[SourceSet], dict[str, np.ndarray]]


def _mixture(track: SourceSet) -> np.ndarray:
    return track.mixture if track.mixture is not None else track.stem_sum()


def evaluate_split(manifest: DatasetManifest, estimator: Estimator, split: str = "test",
                   frame_seconds: float = 1.0) -> EvalReport:
    report = EvalReport(frame_seconds=frame_seconds, hop_seconds=frame_seconds)
    for entry in manifest.split(split):
        track = manifest.load(entry)
        estimates = estimator(track)
        report.tracks.append(evaluate_track(estimates, track.sources, track.sample_rate,
                                            entry.track_id, frame_seconds, frame_seconds))
    return report


def mixture_estimator(track: SourceSet) -> dict[str, np.ndarray]:
    """Input-as-estimate baseline: every source is estimated by the mixture."""
    mix = _mixture(track)
    return {name: mix for name in track.names}


def oracle_estimator(kind: str = "irm", window_length: int = 1024, hop: int = 256) -> Estimator:
    oracle = {"irm": irm_oracle, "ibm": ibm_oracle}[kind]

    def estimate(track: SourceSet) -> dict[str, np.ndarray]:
        return oracle(track, _mixture(track), window_length=window_length, hop=hop).sources

    return estimate


def model_estimator(model, shifts: int = 0, seed=0) -> Estimator:
    def estimate(track: SourceSet) -> dict[str, np.ndarray]:
        mix = Waveform(_mixture(track).astype(np.float32), track.sample_rate)
        return separate_waveform(model, mix, shifts, seed).sources

    return estimate


def _reference_tracks(references, split: str) -> list[tuple[str, Path]]:
    references = Path(references)
    if references.is_file():
        manifest = DatasetManifest.read(references)
        out = []
        for entry in manifest.split(split):
            if entry.path is None:
                raise ValueError(f"{entry.track_id}: manifest entry has no audio path")
            out.append((entry.track_id, Path(manifest.root) / entry.path))
        return out
    if (references / "mixture.wav").exists():
        return [(references.name, references)]
    return [(p.name, p) for p in sorted(references.iterdir()) if (p / "mixture.wav").exists()]


def evaluate_directories(estimates_dir, references, frame_seconds: float = 1.0,
                         baseline: bool = False, split: str = "test") -> EvalReport:
    """Score estimate WAVs against reference track directories.

    ``references`` is a dataset manifest (tracks of ``split`` are used), a
    directory of track directories, or a single track directory; each track
    directory holds the stems plus ``mixture.wav``. Estimates live in
    ``estimates_dir/<track>/<source>.wav`` (or directly in ``estimates_dir``
    for a single track). With ``baseline`` the reference mixture is scored as
    the estimate of every source and ``estimates_dir`` is ignored.
    """
    tracks = _reference_tracks(references, split)
    if not tracks:
        raise FileNotFoundError(f"no reference tracks found under {references}")
    report = EvalReport(frame_seconds=frame_seconds, hop_seconds=frame_seconds)
    for track_id, track_dir in tracks:
        track = load_track_dir(track_dir)
        if baseline:
            estimates = mixture_estimator(track)
        else:
            est_dir = Path(estimates_dir)
            if len(tracks) > 1 or (est_dir / track_id).is_dir():
                est_dir = est_dir / track_id
            estimates = {}
            for name in track.names:
                w = load_wav(est_dir / f"{name}.wav")
                if w.sample_rate != track.sample_rate:
                    raise ValueError(f"{est_dir / name}.wav: sample rate {w.sample_rate} "
                                     f"!= reference {track.sample_rate}")
                estimates[name] = w.samples
        report.tracks.append(evaluate_track(estimates, track.sources, track.sample_rate,
                                            track_id, frame_seconds, frame_seconds))
    return report
