"""Model checkpoints: ``spec.txt`` (key = value) next to a parameter manifest and buffer."""
from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from ..autodiff.checkpoint import load_arrays, save_arrays
from .convtasnet import ConvTasnet, ConvTasnetSpec, build_convtasnet
from .demucs import Demucs, DemucsSpec, build_demucs

MODEL_KINDS = {"demucs": (DemucsSpec, build_demucs), "convtasnet": (ConvTasnetSpec, build_convtasnet)}


class CheckpointError(ValueError):
    pass


def model_kind(model) -> str:
    if isinstance(model, Demucs):
        return "demucs"
    if isinstance(model, ConvTasnet):
        return "convtasnet"
    raise TypeError(f"unknown model type {type(model).__name__}")


def spec_to_text(kind: str, spec) -> str:
    lines = [f"model = {kind}"]
    for f in dataclasses.fields(spec):
        lines.append(f"{f.name} = {getattr(spec, f.name)}")
    return "\n".join(lines) + "\n"


def _parse_value(text: str, default):
    if isinstance(default, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return type(default)(text)


def spec_from_dict(kind: str, values: dict[str, str]):
    if kind not in MODEL_KINDS:
        raise CheckpointError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}")
    spec_cls = MODEL_KINDS[kind][0]
    defaults = spec_cls()
    names = {f.name for f in dataclasses.fields(spec_cls)}
    kwargs = {}
    for key, text in values.items():
        if key not in names:
            raise CheckpointError(f"unknown {kind} spec key {key!r}")
        kwargs[key] = _parse_value(str(text), getattr(defaults, key))
    return spec_cls(**kwargs)


def read_spec(path) -> tuple[str, object]:
    values = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    kind = values.pop("model", None)
    if kind is None:
        raise CheckpointError(f"{path}: missing 'model' key")
    return kind, spec_from_dict(kind, values)


def build_model(kind: str, spec, seed: int = 0, dtype=np.float32):
    return MODEL_KINDS[kind][1](spec, seed, dtype)


def save_model(model, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    kind = model_kind(model)
    (directory / "spec.txt").write_text(spec_to_text(kind, model.spec), encoding="utf-8")
    save_arrays(model.state_dict(), directory / "params.manifest", directory / "params.bin")


def load_model(directory, expected_kind: str | None = None):
    directory = Path(directory)
    if not (directory / "spec.txt").exists():
        raise CheckpointError(f"{directory}: no spec.txt, not a model checkpoint")
    kind, spec = read_spec(directory / "spec.txt")
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"checkpoint holds a {kind} model, expected {expected_kind}")
    state = load_arrays(directory / "params.manifest", directory / "params.bin")
    model = build_model(kind, spec, seed=0)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{directory}: parameters do not match spec: {exc}") from exc
    return model
