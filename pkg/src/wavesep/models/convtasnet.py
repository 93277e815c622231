"""Conv-Tasnet adapted to stereo music: learned front-end plus a dilated TCN mask predictor."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import ops
from ..autodiff.nn import (Conv1d, ConvTranspose1d, DepthwiseConv1d, GlobalLayerNorm, Module,
                           PReLU)
from ..autodiff.tensor import NonFiniteError, Tensor


@dataclass
class ConvTasnetSpec:
    frontend_kernel: int = 20
    frontend_stride: int = 10
    frontend_channels: int = 256
    block_channels: int = 256
    hidden_channels: int = 512
    repeats: int = 4
    blocks_per_repeat: int = 10
    block_kernel: int = 3
    sources: int = 4
    audio_channels: int = 2

    def __post_init__(self):
        if self.frontend_kernel < self.frontend_stride:
            raise ValueError("frontend kernel must be >= stride")
        if self.block_kernel % 2 != 1:
            raise ValueError("block kernel must be odd")

    @property
    def dilations(self) -> list[int]:
        n = self.blocks_per_repeat
        return [2 ** (i % n) for i in range(self.repeats * n)]

    def receptive_field(self) -> int:
        """Receptive field in input samples of one output sample of the mask stack."""
        frames = 1 + sum((self.block_kernel - 1) * d for d in self.dilations)
        return (frames - 1) * self.frontend_stride + self.frontend_kernel

    @classmethod
    def music(cls) -> "ConvTasnetSpec":
        return cls()

    @classmethod
    def speech(cls) -> "ConvTasnetSpec":
        return cls(frontend_kernel=16, frontend_stride=8, frontend_channels=128,
                   repeats=3, blocks_per_repeat=8, sources=2, audio_channels=1)

    @classmethod
    def desk(cls, **overrides) -> "ConvTasnetSpec":
        params = dict(frontend_channels=64, block_channels=16, hidden_channels=32,
                      repeats=2, blocks_per_repeat=4)
        params.update(overrides)
        return cls(**params)


class TemporalBlock(Module):
    def __init__(self, spec: ConvTasnetSpec, dilation: int, rng, dtype):
        b, h = spec.block_channels, spec.hidden_channels
        self.expand = Conv1d(b, h, 1, rng, dtype=dtype)
        self.act1 = PReLU(h, dtype=dtype)
        self.norm1 = GlobalLayerNorm(h, dtype=dtype)
        self.depthwise = DepthwiseConv1d(h, spec.block_kernel, rng, dilation=dilation, dtype=dtype)
        self.act2 = PReLU(h, dtype=dtype)
        self.norm2 = GlobalLayerNorm(h, dtype=dtype)
        self.residual = Conv1d(h, b, 1, rng, dtype=dtype)
        self.skip = Conv1d(h, b, 1, rng, dtype=dtype)

    def forward(self, x: Tensor, circular: bool = False) -> tuple[Tensor, Tensor]:
        y = self.norm1(self.act1(self.expand(x)))
        y = self.norm2(self.act2(self.depthwise(y, circular=circular)))
        return x + self.residual(y), self.skip(y)


class ConvTasnet(Module):
    def __init__(self, spec: ConvTasnetSpec, rng: np.random.Generator, dtype=np.float32):
        self.spec = spec
        n = spec.frontend_channels
        self.encoder = Conv1d(spec.audio_channels, n, spec.frontend_kernel, rng,
                              stride=spec.frontend_stride, bias=False, dtype=dtype)
        self.bottleneck = Conv1d(n, spec.block_channels, 1, rng, dtype=dtype)
        self.blocks = [TemporalBlock(spec, d, rng, dtype) for d in spec.dilations]
        self.mask_head = Conv1d(spec.block_channels, spec.sources * n, 1, rng, bias=False, dtype=dtype)
        self.decoder = ConvTranspose1d(n, spec.audio_channels, spec.frontend_kernel, rng,
                                       stride=spec.frontend_stride, bias=False, dtype=dtype)

    def padded_length(self, length: int) -> int:
        k, s = self.spec.frontend_kernel, self.spec.frontend_stride
        if length <= k:
            return k
        return k + int(np.ceil((length - k) / s)) * s

    def masks(self, encoded: Tensor, circular: bool = False) -> Tensor:
        """Nonnegative masks ``(B, S, N, frames)`` from the encoded mixture."""
        x = self.bottleneck(encoded)
        skip_sum = None
        for block in self.blocks:
            x, skip = block(x, circular=circular)
            skip_sum = skip if skip_sum is None else skip_sum + skip
        batch, _, frames = encoded.shape
        m = ops.relu(self.mask_head(skip_sum))
        return ops.reshape(m, (batch, self.spec.sources, self.spec.frontend_channels, frames))

    def forward(self, mix: Tensor, circular: bool = False) -> Tensor:
        """``(B, C, T)`` mixture to ``(B, S, C, T)`` estimates.

        ``circular=True`` treats the input as one period of a periodic signal
        (needs ``T`` divisible by the front-end stride); the whole network is
        then exactly equivariant to stride-multiple circular shifts.
        """
        if not np.all(np.isfinite(mix.data)):
            raise NonFiniteError("non-finite input to Conv-Tasnet")
        spec = self.spec
        batch, channels, length = mix.shape
        k, s = spec.frontend_kernel, spec.frontend_stride
        if circular:
            if length % s:
                raise ValueError("circular mode needs a length divisible by the front-end stride")
            x = ops.pad_circular(mix, 0, k - s)
        else:
            target = self.padded_length(length)
            x = ops.pad(mix, 0, target - length) if target != length else mix
        encoded = ops.relu(self.encoder(x))
        mask = self.masks(encoded, circular=circular)
        _, _, n, frames = mask.shape
        masked = ops.mul(ops.reshape(encoded, (batch, 1, n, frames)), mask)
        decoded = self.decoder(ops.reshape(masked, (batch * spec.sources, n, frames)))
        if circular:
            decoded = ops.fold_circular(decoded, k - s)
        else:
            decoded = ops.time_slice(decoded, 0, length)
        return ops.reshape(decoded, (batch, spec.sources, channels, length))


def build_convtasnet(spec: ConvTasnetSpec, seed: int = 0, dtype=np.float32) -> ConvTasnet:
    return ConvTasnet(spec, np.random.default_rng(seed), dtype)


def check_equivariance(model, x: np.ndarray, shift: int) -> float:
    """Max ``|f(roll(x, shift)) - roll(f(x), shift)|`` over all outputs.

    Conv-Tasnet is evaluated in circular mode; other models use their plain forward.
    """
    from ..autodiff.tensor import no_grad

    x = np.asarray(x)
    kwargs = {"circular": True} if isinstance(model, ConvTasnet) else {}
    with no_grad():
        base = model(Tensor(x), **kwargs).data
        moved = model(Tensor(np.roll(x, shift, axis=-1)), **kwargs).data
    return float(np.max(np.abs(moved - np.roll(base, shift, axis=-1))))
