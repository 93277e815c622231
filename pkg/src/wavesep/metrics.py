"""Projection-based BSS-eval: decomposition, SDR/SIR/SAR and SiSec-style aggregation.

Signals are flattened (stereo channels concatenated) before projecting. No
distortion filters are used; the target component is the orthogonal
projection onto the reference itself.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DB_CLAMP = 100.0
EPS = 1e-20
SILENCE = 1e-8


class RankDeficientError(np.linalg.LinAlgError):
    """Reference signals are (numerically) linearly dependent."""


def _flat(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(-1)


def _project(estimate: np.ndarray, refs: np.ndarray) -> np.ndarray:
    """Orthogonal projection of ``estimate`` onto the row span of ``refs`` via the Gram system."""
    gram = refs @ refs.T
    rhs = refs @ estimate
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise RankDeficientError(f"reference Gram matrix is ill-conditioned (cond={cond:.3g})")
    coeffs = np.linalg.solve(gram, rhs)
    return coeffs @ refs


def decompose(estimate, references, j: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split ``estimate`` of source ``j`` into target, interference and artifact parts.

    ``references`` is a sequence of arrays aligned with ``estimate``; outputs
    are flat float64 vectors.
    """
    est = _flat(estimate)
    refs = np.stack([_flat(r) for r in references])
    if refs.shape[1] != est.size:
        raise ValueError("estimate and references are not aligned")
    target_ref = refs[j]
    energy = target_ref @ target_ref
    if energy <= 0.0:
        raise ValueError(f"reference {j} has zero norm")
    s_target = (target_ref @ est / energy) * target_ref
    p_all = _project(est, refs)
    return s_target, p_all - s_target, est - p_all


def _ratio_db(num: float, den: float) -> float:
    if num <= EPS and den <= EPS:
        return -DB_CLAMP if num < den else DB_CLAMP
    value = 10.0 * math.log10(max(num, EPS) / max(den, EPS))
    return float(min(DB_CLAMP, max(-DB_CLAMP, value)))


def sdr(s_target, e_interf, e_artif) -> float:
    return _ratio_db(float(s_target @ s_target), float(np.sum((e_interf + e_artif) ** 2)))


def sir(s_target, e_interf, e_artif=None) -> float:
    return _ratio_db(float(s_target @ s_target), float(e_interf @ e_interf))


def sar(s_target, e_interf, e_artif) -> float:
    return _ratio_db(float(np.sum((s_target + e_interf) ** 2)), float(e_artif @ e_artif))


def bss_eval(estimate, references, j: int) -> tuple[float, float, float]:
    parts = decompose(estimate, references, j)
    return sdr(*parts), sir(*parts), sar(*parts)


@dataclass
class TrackScores:
    track: str
    # per source: list of (frame_index, sdr, sir, sar)
    frames: dict[str, list[tuple[int, float, float, float]]] = field(default_factory=dict)

    def median(self, source: str, metric: str = "sdr") -> float:
        column = {"sdr": 1, "sir": 2, "sar": 3}[metric]
        values = [row[column] for row in self.frames.get(source, [])]
        return float(np.median(values)) if values else float("nan")


def evaluate_track(estimates: dict[str, np.ndarray], references: dict[str, np.ndarray],
                   sample_rate: int, track: str = "track", frame_seconds: float = 1.0,
                   hop_seconds: float = 1.0) -> TrackScores:
    """Framewise SDR/SIR/SAR over non-overlapping windows.

    Frames where the evaluated reference is silent are skipped. Silent
    interfering references are left out of the projection span.
    """
    names = list(references)
    length = next(iter(references.values())).shape[-1]
    for name in names:
        if np.shape(estimates[name]) != np.shape(references[name]):
            raise ValueError(f"estimate for {name!r} is not aligned with its reference")
    win = int(round(frame_seconds * sample_rate))
    hop = int(round(hop_seconds * sample_rate))
    n_frames = 1 + (length - win) // hop if length >= win else 1
    scores = TrackScores(track, {name: [] for name in names})
    for f in range(n_frames):
        sl = slice(f * hop, f * hop + win)
        refs = {n: _flat(references[n][..., sl]) for n in names}
        active = [n for n in names if np.mean(refs[n] ** 2) > SILENCE]
        for name in names:
            if name not in active:
                continue
            span = [refs[n] for n in active]
            try:
                parts = decompose(_flat(estimates[name][..., sl]), span, active.index(name))
            except RankDeficientError as exc:
                log.warning("%s/%s frame %d skipped: %s", track, name, f, exc)
                continue
            scores.frames[name].append((f, sdr(*parts), sir(*parts), sar(*parts)))
    for name in names:
        if not scores.frames[name]:
            log.warning("%s/%s: no evaluable frame", track, name)
    return scores


@dataclass
class EvalReport:
    tracks: list[TrackScores] = field(default_factory=list)
    frame_seconds: float = 1.0
    hop_seconds: float = 1.0

    @property
    def sources(self) -> list[str]:
        names: list[str] = []
        for t in self.tracks:
            names.extend(n for n in t.frames if n not in names)
        return names

    def track_medians(self, source: str, metric: str = "sdr") -> list[float]:
        return [t.median(source, metric) for t in self.tracks]

    def global_median(self, source: str, metric: str = "sdr") -> float:
        """Median over tracks of the per-track median, ignoring non-evaluable tracks."""
        values = [v for v in self.track_medians(source, metric) if not math.isnan(v)]
        return float(np.median(values)) if values else float("nan")

    def summary(self) -> dict:
        return {
            "frame_seconds": self.frame_seconds,
            "hop_seconds": self.hop_seconds,
            "tracks": [t.track for t in self.tracks],
            "median": {m: {s: self.global_median(s, m) for s in self.sources}
                       for m in ("sdr", "sir", "sar")},
            "per_track": {t.track: {s: t.median(s) for s in t.frames} for t in self.tracks},
        }

    def rows(self):
        for t in self.tracks:
            for source, frames in t.frames.items():
                for f, a, b, c in frames:
                    yield t.track, source, f, a, b, c

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["track", "source", "frame_index", "sdr", "sir", "sar"])
            for track, source, f, a, b, c in self.rows():
                writer.writerow([track, source, f, f"{a:.6f}", f"{b:.6f}", f"{c:.6f}"])

    def write_summary(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")


def median_of_medians(per_track: list[float]) -> float:
    return float(np.median(per_track))
