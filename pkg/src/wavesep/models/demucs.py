"""Demucs: convolutional U-net with a BiLSTM bottleneck operating on waveforms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import ops
from ..autodiff.nn import BiLSTM, Conv1d, ConvTranspose1d, Linear, Module
from ..autodiff.tensor import NonFiniteError, Tensor


@dataclass
class DemucsSpec:
    depth: int = 6
    initial_channels: int = 100
    growth: int = 2
    kernel: int = 8
    stride: int = 4
    lstm_layers: int = 2
    context: int = 3
    sources: int = 4
    audio_channels: int = 2
    rescale: float = 0.1
    glu: bool = True           # False: the "ReLU instead of GLU" ablation
    context_glu: bool = True   # False: ReLU after the decoder context conv
    rescale_init: bool = True

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.kernel <= self.stride:
            raise ValueError("kernel must exceed stride")
        if self.context % 2 != 1:
            raise ValueError("context kernel must be odd to preserve length")

    @property
    def channels(self) -> list[int]:
        return [self.initial_channels * self.growth ** i for i in range(self.depth)]

    @classmethod
    def full(cls) -> "DemucsSpec":
        return cls()

    @classmethod
    def desk(cls, **overrides) -> "DemucsSpec":
        params = dict(depth=4, initial_channels=16)
        params.update(overrides)
        return cls(**params)


def valid_length(length: int, spec: DemucsSpec) -> int:
    """Smallest length >= ``length`` that the encoder/decoder stack maps onto itself."""
    if length < 1:
        raise ValueError("length must be >= 1")
    frames = length
    for _ in range(spec.depth):
        frames = max(1, int(np.ceil((frames - spec.kernel) / spec.stride)) + 1)
    for _ in range(spec.depth):
        frames = (frames - 1) * spec.stride + spec.kernel
    return int(frames)


class EncoderBlock(Module):
    def __init__(self, c_in, c_out, spec: DemucsSpec, rng, dtype):
        self.glu = spec.glu
        self.conv = Conv1d(c_in, c_out, spec.kernel, rng, stride=spec.stride, dtype=dtype)
        self.rewrite = Conv1d(c_out, 2 * c_out if spec.glu else c_out, 1, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = ops.relu(self.conv(x))
        x = self.rewrite(x)
        return ops.glu(x) if self.glu else ops.relu(x)


class DecoderBlock(Module):
    def __init__(self, c_in, c_out, spec: DemucsSpec, rng, dtype, last: bool):
        self.glu = spec.glu and spec.context_glu
        self.last = last
        self.context = spec.context
        width = 2 * c_in if self.glu else c_in
        self.rewrite = Conv1d(c_in, width, spec.context, rng, dtype=dtype)
        self.conv_tr = ConvTranspose1d(c_in, c_out, spec.kernel, rng, stride=spec.stride, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        half = self.context // 2
        x = self.rewrite(ops.pad(x, half, half))
        x = ops.glu(x) if self.glu else ops.relu(x)
        x = self.conv_tr(x)
        return x if self.last else ops.relu(x)


class Demucs(Module):
    def __init__(self, spec: DemucsSpec, rng: np.random.Generator, dtype=np.float32):
        self.spec = spec
        chans = [spec.audio_channels] + spec.channels
        self.encoder = [EncoderBlock(chans[i], chans[i + 1], spec, rng, dtype)
                        for i in range(spec.depth)]
        top = chans[-1]
        self.lstm = BiLSTM(top, top, spec.lstm_layers, rng, dtype) if spec.lstm_layers else None
        self.lstm_linear = Linear(2 * top, top, rng, dtype=dtype) if spec.lstm_layers else None
        # decoder[0] is block L (runs first), decoder[-1] is block 1
        self.decoder = []
        for i in range(spec.depth, 0, -1):
            c_out = spec.sources * spec.audio_channels if i == 1 else chans[i - 1]
            self.decoder.append(DecoderBlock(chans[i], c_out, spec, rng, dtype, last=(i == 1)))

    def conv_layers(self) -> list:
        """Every regular and transposed convolution, in construction order."""
        layers = []
        for block in self.encoder:
            layers += [block.conv, block.rewrite]
        for block in self.decoder:
            layers += [block.rewrite, block.conv_tr]
        return layers

    def forward(self, mix: Tensor, return_features: bool = False):
        """``(B, C0, T)`` mixture to ``(B, S, C0, T)`` source estimates."""
        if not np.all(np.isfinite(mix.data)):
            raise NonFiniteError("non-finite input to Demucs")
        batch, channels, length = mix.shape
        target = valid_length(length, self.spec)
        x = ops.pad(mix, 0, target - length) if target != length else mix
        skips = []
        features = []
        for block in self.encoder:
            x = block(x)
            skips.append(x)
            features.append(x)
        if self.lstm is not None:
            seq = ops.transpose(x, (0, 2, 1))
            seq = self.lstm_linear(self.lstm(seq))
            x = ops.transpose(seq, (0, 2, 1))
        for block in self.decoder:
            x = block(x + skips.pop())
            features.append(x)
        if target != length:
            x = ops.time_slice(x, 0, length)
        out = ops.reshape(x, (batch, self.spec.sources, self.spec.audio_channels, length))
        if return_features:
            return out, features
        return out


def rescale_weights(layers, reference: float) -> list[float]:
    """Divide each layer's weight by ``sqrt(std(w) / reference)``; biases untouched.

    Returns the per-layer ``alpha`` values.
    """
    alphas = []
    for layer in layers:
        w = layer.weight.data
        std = float(np.std(w.astype(np.float64)))
        if std == 0.0:
            raise ValueError("cannot rescale a zero-variance weight tensor")
        alpha = std / reference
        layer.weight.data = (w / np.sqrt(alpha)).astype(w.dtype)
        alphas.append(alpha)
    return alphas


def encoder_signal_ratio(model: Demucs, mix: np.ndarray) -> float:
    """Std of the input-driven part of the deepest encoder output over that of the first.

    The response to an all-zero input (the bias contribution) is subtracted
    from each feature map first, so the ratio tracks how the signal itself is
    amplified or attenuated with depth.
    """
    from ..autodiff import no_grad
    mix = np.asarray(mix, dtype=model.encoder[0].conv.weight.data.dtype)
    with no_grad():
        _, feats = model(Tensor(mix), return_features=True)
        _, zero = model(Tensor(np.zeros_like(mix)), return_features=True)
    depth = model.spec.depth
    first = np.std(feats[0].data.astype(np.float64) - zero[0].data)
    last = np.std(feats[depth - 1].data.astype(np.float64) - zero[depth - 1].data)
    return float(last / first)


def build_demucs(spec: DemucsSpec, seed: int = 0, dtype=np.float32) -> Demucs:
    rng = np.random.default_rng(seed)
    model = Demucs(spec, rng, dtype)
    if spec.rescale_init:
        rescale_weights(model.conv_layers(), spec.rescale)
    return model
