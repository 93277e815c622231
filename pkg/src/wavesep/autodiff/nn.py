"""Parameter containers and layers assembled from the functional ops."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .lstm import bilstm_layer
from .tensor import Parameter, Tensor


class Module:
    """Minimal parameter tree. Children and parameters are discovered from
    instance attributes in assignment order, so naming is deterministic."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng: np.random.Generator, shape, bound: float, dtype) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv1d(Module):
    """Strided/dilated convolution with uniform ``1/sqrt(fan_in)`` init."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, dilation: int = 1, bias: bool = True, dtype=np.float32):
        self.stride, self.dilation, self.kernel = stride, dilation, kernel
        bound = 1.0 / np.sqrt(c_in * kernel)
        self.weight = Parameter(_uniform(rng, (c_out, c_in, kernel), bound, dtype))
        self.bias = Parameter(_uniform(rng, (c_out,), bound, dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if self.kernel == 1 and self.stride == 1:
            return ops.pointwise_conv1d(x, self.weight, self.bias)
        return ops.conv1d(x, self.weight, self.bias, self.stride, self.dilation)


class ConvTranspose1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, bias: bool = True, dtype=np.float32):
        self.stride = stride
        # same fan-in convention as the usual framework default for transposed convs
        bound = 1.0 / np.sqrt(c_out * kernel)
        self.weight = Parameter(_uniform(rng, (c_in, c_out, kernel), bound, dtype))
        self.bias = Parameter(_uniform(rng, (c_out,), bound, dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv_transpose1d(x, self.weight, self.bias, self.stride)


class DepthwiseConv1d(Module):
    def __init__(self, channels: int, kernel: int, rng: np.random.Generator, dilation: int = 1,
                 bias: bool = True, dtype=np.float32):
        self.kernel, self.dilation = kernel, dilation
        bound = 1.0 / np.sqrt(kernel)
        self.weight = Parameter(_uniform(rng, (channels, 1, kernel), bound, dtype))
        self.bias = Parameter(_uniform(rng, (channels,), bound, dtype)) if bias else None

    def forward(self, x: Tensor, circular: bool = False) -> Tensor:
        half = (self.kernel - 1) * self.dilation // 2
        x = ops.pad_circular(x, half, half) if circular else ops.pad(x, half, half)
        return ops.depthwise_conv1d(x, self.weight, self.bias, 1, self.dilation)


class Linear(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, bias: bool = True,
                 dtype=np.float32):
        bound = 1.0 / np.sqrt(c_in)
        self.weight = Parameter(_uniform(rng, (c_out, c_in), bound, dtype))
        self.bias = Parameter(_uniform(rng, (c_out,), bound, dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class PReLU(Module):
    def __init__(self, channels: int, init: float = 0.25, dtype=np.float32):
        self.weight = Parameter(np.full(channels, init, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.prelu(x, self.weight)


class GlobalLayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-8, dtype=np.float32):
        self.eps = eps
        self.gain = Parameter(np.ones(channels, dtype=dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.global_layer_norm(x, self.gain, self.bias, self.eps)


class LSTMDirection(Module):
    def __init__(self, c_in: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        bound = 1.0 / np.sqrt(hidden)
        self.weight_ih = Parameter(_uniform(rng, (4 * hidden, c_in), bound, dtype))
        self.weight_hh = Parameter(_uniform(rng, (4 * hidden, hidden), bound, dtype))
        self.bias = Parameter(_uniform(rng, (4 * hidden,), bound, dtype))


class BiLSTM(Module):
    """Stacked bidirectional LSTM on ``(B, T, C)``; output ``(B, T, 2H)``."""

    def __init__(self, c_in: int, hidden: int, layers: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.hidden = hidden
        self.layers = []
        for layer in range(layers):
            width = c_in if layer == 0 else 2 * hidden
            self.layers.append(_BiLayer(width, hidden, rng, dtype))

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = bilstm_layer(x, layer.forward_dir.weight_ih, layer.forward_dir.weight_hh,
                             layer.forward_dir.bias, layer.backward_dir.weight_ih,
                             layer.backward_dir.weight_hh, layer.backward_dir.bias)
        return x


class _BiLayer(Module):
    def __init__(self, c_in: int, hidden: int, rng: np.random.Generator, dtype):
        self.forward_dir = LSTMDirection(c_in, hidden, rng, dtype)
        self.backward_dir = LSTMDirection(c_in, hidden, rng, dtype)
