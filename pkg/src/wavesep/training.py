"""Losses, Adam with global-norm clipping, and the epoch training loop with checkpoints.

The objective is the per-source reconstruction error summed over sources.
``loss_l1``/``loss_l2`` return the mean over every coordinate of the
``(B, S, C, T)`` tensors, which equals the mean of per-source losses;
``source_sum_objective`` rescales that by ``S`` to give the sum form.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteError, Tensor, backward, load_arrays, no_grad, ops, save_arrays
from .data import DatasetManifest, SourceSet, augment_batch, extract_sampler
from .models.io import MODEL_KINDS, build_model, load_model, save_model, spec_from_dict

log = logging.getLogger(__name__)

LOSSES = ("l1", "l2")
LOG_HEADER = ["epoch", "train_loss", "valid_l1", "wall_seconds"]


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# losses


def _check_aligned(estimate: Tensor, target) -> None:
    if tuple(estimate.shape) != tuple(np.shape(target)):
        raise ValueError(f"estimate shape {tuple(estimate.shape)} does not match "
                         f"target shape {tuple(np.shape(target))}")


def loss_l1(estimate: Tensor, target) -> Tensor:
    """Mean absolute error over all coordinates."""
    _check_aligned(estimate, target)
    return ops.mean_all(ops.absolute(ops.sub(estimate, target)))


def loss_l2(estimate: Tensor, target) -> Tensor:
    """Mean squared error over all coordinates."""
    _check_aligned(estimate, target)
    return ops.mean_all(ops.square(ops.sub(estimate, target)))


LOSS_FUNCTIONS = {"l1": loss_l1, "l2": loss_l2}


def source_sum_objective(estimate: Tensor, target, loss: str = "l1") -> Tensor:
    """Sum over the source axis (axis 1) of the per-source mean loss."""
    per_coordinate = LOSS_FUNCTIONS[loss](estimate, target)
    return ops.mul(per_coordinate, float(estimate.shape[1]))


def per_source_losses(estimate: np.ndarray, target: np.ndarray, loss: str = "l1") -> np.ndarray:
    diff = np.asarray(estimate, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    values = np.abs(diff) if loss == "l1" else diff * diff
    return values.mean(axis=tuple(i for i in range(values.ndim) if i != 1))


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    first: list[np.ndarray]
    second: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params) -> "OptimizerState":
        return cls([np.zeros_like(p.data) for p in params],
                   [np.zeros_like(p.data) for p in params])

    def check(self, params) -> None:
        if self.step < 0:
            raise ValueError("optimizer step must be non-negative")
        for p, m, v in zip(params, self.first, self.second, strict=True):
            if m.shape != p.shape or v.shape != p.shape:
                raise ValueError(f"moment buffer shape {m.shape} does not match parameter {p.shape}")


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise NonFiniteError(f"gradient norm is {norm}")
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= g.dtype.type(scale)
    return norm


def adam_step(params, grads, state: OptimizerState, lr: float) -> None:
    """Bias-corrected Adam update, in place. Nothing is modified if any gradient is non-finite."""
    grads = [np.zeros_like(p.data) if g is None else g for p, g in zip(params, grads, strict=True)]
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {i} "
                                 f"({getattr(params[i], 'name', '') or 'unnamed'})")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.first, state.second):
        dtype = p.data.dtype.type
        m *= dtype(b1)
        m += dtype(1.0 - b1) * g
        v *= dtype(b2)
        v += dtype(1.0 - b2) * (g * g)
        update = (m / dtype(corr1)) / (np.sqrt(v / dtype(corr2)) + dtype(state.eps))
        p.data -= dtype(lr) * update


def save_optimizer(state: OptimizerState, directory) -> None:
    arrays = {}
    for i, (m, v) in enumerate(zip(state.first, state.second)):
        arrays[f"m.{i}"] = m
        arrays[f"v.{i}"] = v
    arrays["step"] = np.array([state.step], dtype=np.int64)
    save_arrays(arrays, Path(directory) / "optim.manifest", Path(directory) / "optim.bin")


def load_optimizer(directory, params) -> OptimizerState:
    arrays = load_arrays(Path(directory) / "optim.manifest", Path(directory) / "optim.bin")
    n = len(params)
    state = OptimizerState([arrays[f"m.{i}"] for i in range(n)],
                           [arrays[f"v.{i}"] for i in range(n)], int(arrays["step"][0]))
    state.check(params)
    return state


# ---------------------------------------------------------------------------
# configuration

_DATA_DEFAULTS = {
    "demucs": dict(extract_seconds=11.0, stride_seconds=1.0, crop_seconds=10.0, shift_seconds=1.0),
    "convtasnet": dict(extract_seconds=3.0, stride_seconds=1.0, crop_seconds=2.0, shift_seconds=1.0),
}


@dataclass
class TrainConfig:
    model: str = "demucs"
    loss: str = "l1"
    learning_rate: float = 3e-4
    batch_size: int = 4
    epochs: int = 20
    seed: int = 0
    grad_clip: float = 5.0
    checkpoint: str = "checkpoints/demucs"
    manifest: str = "data/manifest.txt"
    extract_seconds: float | None = None
    stride_seconds: float = 1.0
    crop_seconds: float | None = None
    shift_seconds: float = 1.0
    valid_chunk_seconds: float = 8.0
    shuffle: bool = True
    p_swap: float = 0.5
    p_sign: float = 0.5
    model_overrides: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {sorted(MODEL_KINDS)}, got {self.model!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        defaults = _DATA_DEFAULTS[self.model]
        if self.extract_seconds is None:
            self.extract_seconds = defaults["extract_seconds"]
        if self.crop_seconds is None:
            self.crop_seconds = defaults["crop_seconds"]
        for name in ("learning_rate", "batch_size", "epochs", "extract_seconds", "stride_seconds",
                     "crop_seconds", "valid_chunk_seconds"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("grad_clip", "shift_seconds"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("p_swap", "p_sign"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.crop_seconds + self.shift_seconds > self.extract_seconds + 1e-9:
            raise ConfigError("crop_seconds + shift_seconds must not exceed extract_seconds")
        self.model_spec()

    def model_spec(self):
        spec_cls = MODEL_KINDS[self.model][0]
        try:
            overrides = spec_from_dict(self.model, self.model_overrides)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        given = {k: getattr(overrides, k) for k in self.model_overrides}
        return spec_cls.desk(**given)


# Which section each TrainConfig key lives in.
_SECTIONS = {
    "train": ("model", "loss", "learning_rate", "batch_size", "epochs", "seed", "grad_clip",
              "checkpoint"),
    "data": ("manifest", "extract_seconds", "stride_seconds", "crop_seconds", "shift_seconds",
             "valid_chunk_seconds"),
    "augment": ("shuffle", "p_swap", "p_sign"),
}
_PATH_KEYS = ("checkpoint", "manifest")


def _convert(name: str, text: str):
    kind = {f.name: f.type for f in dataclasses.fields(TrainConfig)}[name]
    try:
        if "bool" in kind:
            if text.lower() in ("true", "yes", "1"):
                return True
            if text.lower() in ("false", "no", "0"):
                return False
            raise ValueError(text)
        if "int" in kind:
            return int(text)
        if "float" in kind:
            return float(text)
    except ValueError:
        raise ConfigError(f"invalid value for {name!r}: {text!r}") from None
    return text


def parse_config(text: str, base_dir=None) -> TrainConfig:
    """Parse an INI-style config with ``[train]``, ``[data]``, ``[augment]``, ``[model]``."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    values: dict = {}
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == "model":
            values["model_overrides"] = items
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in items.items():
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown config key {key!r} in section [{section}]")
            value = _convert(key, raw.strip())
            if key in _PATH_KEYS and base_dir is not None and not Path(value).is_absolute():
                value = str(Path(base_dir) / value)
            values[key] = value
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)


def config_to_text(config: TrainConfig, base_dir=None) -> str:
    """INI text for ``config``; with ``base_dir``, path keys are written relative to it."""
    lines = []
    for section, keys in _SECTIONS.items():
        lines.append(f"[{section}]")
        for k in keys:
            value = getattr(config, k)
            if k in _PATH_KEYS and base_dir is not None:
                value = os.path.relpath(Path(value).resolve(), Path(base_dir).resolve())
            lines.append(f"{k} = {value}")
        lines.append("")
    spec = config.model_spec()
    lines.append("[model]")
    lines.extend(f"{f.name} = {getattr(spec, f.name)}" for f in dataclasses.fields(spec))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# training loop


def _model_output(model, mixture: np.ndarray, chunk_seconds: float, sample_rate: int) -> np.ndarray:
    from .inference import model_forward
    return model_forward(model, mixture, sample_rate, chunk_seconds)


def validation_l1(model, tracks: list[SourceSet], chunk_seconds: float = 8.0) -> float:
    """Mean L1 over full validation tracks, averaged over tracks."""
    if not tracks:
        raise ValueError("validation split is empty")
    values = []
    with no_grad():
        for track in tracks:
            mixture = track.mixture if track.mixture is not None else track.stem_sum()
            est = _model_output(model, mixture, chunk_seconds, track.sample_rate)
            value = float(np.mean(np.abs(est.astype(np.float64) - track.stacked())))
            if not math.isfinite(value):
                raise NonFiniteError(f"non-finite validation loss {value}")
            values.append(value)
    return float(np.mean(values))


@dataclass
class TrainResult:
    log_rows: list[dict]
    best_epoch: int
    best_valid_l1: float
    checkpoint: Path


def _write_log(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_HEADER)
        for r in rows:
            writer.writerow([r["epoch"], repr(float(r["train_loss"])), repr(float(r["valid_l1"])),
                             f"{r['wall_seconds']:.3f}"])


def read_log(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{"epoch": int(r["epoch"]), "train_loss": float(r["train_loss"]),
                 "valid_l1": float(r["valid_l1"]), "wall_seconds": float(r["wall_seconds"])}
                for r in csv.DictReader(fh)]


def _save_state(directory: Path, epoch: int, best_epoch: int, best_valid: float) -> None:
    (directory / "state.txt").write_text(
        f"epoch = {epoch}\nbest_epoch = {best_epoch}\nbest_valid_l1 = {best_valid!r}\n",
        encoding="utf-8")


def _read_state(directory: Path) -> dict:
    values = {}
    for line in (directory / "state.txt").read_text(encoding="utf-8").splitlines():
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return {"epoch": int(values["epoch"]), "best_epoch": int(values["best_epoch"]),
            "best_valid_l1": float(values["best_valid_l1"])}


def _batches(iterator, size: int):
    batch = []
    for item in iterator:
        batch.append(item)
        if len(batch) == size:
            yield batch
            batch = []
    if batch:
        yield batch


def train_epoch(model, state: OptimizerState, tracks: dict[str, SourceSet], config: TrainConfig,
                epoch: int) -> float:
    """One pass over all extracts; returns the mean training loss."""
    params = model.parameters()
    loss_fn = LOSS_FUNCTIONS[config.loss]
    losses = []
    sampler = extract_sampler(tracks, epoch, config.seed, config.extract_seconds,
                              config.stride_seconds, config.crop_seconds, config.shift_seconds)
    for index, batch in enumerate(_batches(sampler, config.batch_size)):
        stems = np.stack([ex.example.stacked() for ex in batch])
        stems, mixture = augment_batch(stems, [config.seed, epoch, index], config.shuffle,
                                       config.p_swap, config.p_sign)
        dtype = params[0].data.dtype
        ids = ", ".join(f"{ex.track_id}@{ex.offset}+{ex.shift}" for ex in batch)
        model.zero_grad()
        try:
            estimate = model(Tensor(mixture.astype(dtype)))
        except NonFiniteError as exc:
            raise NonFiniteError(f"{exc} at epoch {epoch} step {index} ({ids})") from exc
        loss = loss_fn(estimate, stems.astype(dtype))
        value = float(loss.data)
        if not math.isfinite(value):
            raise NonFiniteError(f"non-finite loss {value} at epoch {epoch} step {index} ({ids})")
        backward(loss)
        if config.grad_clip > 0:
            clip_grad_norm(params, config.grad_clip)
        adam_step(params, [p.grad for p in params], state, config.learning_rate)
        losses.append(value)
    return float(np.mean(losses)) if losses else float("nan")


def train(config: TrainConfig, manifest: DatasetManifest, resume: bool = False,
          progress=None) -> TrainResult:
    """Run the training loop, keeping the best-validation parameters in ``<checkpoint>/best``.

    ``<checkpoint>/last`` holds parameters, optimizer moments and the epoch
    counter so an interrupted run can be resumed; ``<checkpoint>/log.csv``
    has one row per epoch, epoch 0 being the untrained model.
    """
    root = Path(config.checkpoint)
    last_dir, best_dir, log_path = root / "last", root / "best", root / "log.csv"
    train_tracks = {e.track_id: manifest.load(e) for e in manifest.split("train")}
    valid_tracks = [manifest.load(e) for e in manifest.split("valid")]
    if not train_tracks:
        raise ValueError("manifest has no train tracks")

    if resume:
        if not (last_dir / "state.txt").exists():
            raise FileNotFoundError(f"no resumable checkpoint under {root}")
        model = load_model(last_dir, expected_kind=config.model)
        state = load_optimizer(last_dir, model.parameters())
        saved = _read_state(last_dir)
        start, best_epoch, best_valid = saved["epoch"] + 1, saved["best_epoch"], saved["best_valid_l1"]
        rows = [r for r in read_log(log_path) if r["epoch"] <= saved["epoch"]]
    else:
        root.mkdir(parents=True, exist_ok=True)
        model = build_model(config.model, config.model_spec(), seed=config.seed)
        state = OptimizerState.for_params(model.parameters())
        (root / "config.ini").write_text(config_to_text(config, base_dir=root), encoding="utf-8")
        t0 = time.perf_counter()
        best_valid = validation_l1(model, valid_tracks, config.valid_chunk_seconds)
        best_epoch, start = 0, 1
        rows = [{"epoch": 0, "train_loss": float("nan"), "valid_l1": best_valid,
                 "wall_seconds": time.perf_counter() - t0}]
        save_model(model, best_dir)
        _write_log(log_path, rows)

    for epoch in range(start, config.epochs + 1):
        t0 = time.perf_counter()
        train_loss = train_epoch(model, state, train_tracks, config, epoch)
        valid = validation_l1(model, valid_tracks, config.valid_chunk_seconds)
        rows.append({"epoch": epoch, "train_loss": train_loss, "valid_l1": valid,
                     "wall_seconds": time.perf_counter() - t0})
        if valid < best_valid:
            best_valid, best_epoch = valid, epoch
            save_model(model, best_dir)
        save_model(model, last_dir)
        save_optimizer(state, last_dir)
        _save_state(last_dir, epoch, best_epoch, best_valid)
        _write_log(log_path, rows)
        log.info("epoch %d train %.5f valid_l1 %.5f (%.1f s)", epoch, train_loss, valid,
                 rows[-1]["wall_seconds"])
        if progress is not None:
            progress(rows[-1])
    return TrainResult(rows, best_epoch, best_valid, best_dir)
