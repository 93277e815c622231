"""Tensor and reverse-mode tape.

Every differentiable op appends one :class:`Node` to the active tape in
execution order, so the tape itself is a topological order of the graph.
:func:`backward` walks it in reverse and accumulates adjoints additively.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced NaN or infinity."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    # arithmetic sugar; the ops live in ``ops``
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


class Parameter(Tensor):
    """A trainable tensor; ``name`` is its dotted path inside a model."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None, dtype=None):
        super().__init__(data, requires_grad=True, name=name, dtype=dtype)


class Node:
    __slots__ = ("output", "inputs", "backward_fn", "op")

    def __init__(self, output: Tensor, inputs: Sequence[Tensor], backward_fn: Callable, op: str):
        self.output = output
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn
        self.op = op


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self.enabled = True

    def clear(self) -> None:
        self.nodes.clear()


_local = threading.local()


def get_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


@contextmanager
def no_grad():
    tape = get_tape()
    previous = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = previous


def grad_enabled() -> bool:
    return get_tape().enabled


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def make_output(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap ``data`` and record a node if any input needs a gradient."""
    needs = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        get_tape().nodes.append(Node(out, inputs, backward_fn, op))
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.data.shape:
        raise ValueError(f"gradient shape {g.shape} does not match tensor shape {t.data.shape}")
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor, grad: np.ndarray | None = None, check_finite: bool = True) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it.

    Consumes the tape: after the call the recorded graph is released.
    """
    tape = get_tape()
    if not loss.requires_grad:
        tape.clear()
        return
    seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.data.dtype)
    _accumulate(loss, seed)
    nodes = tape.nodes
    try:
        for node in reversed(nodes):
            g_out = node.output.grad
            if g_out is None:
                continue
            grads = node.backward_fn(g_out)
            for inp, g in zip(node.inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                if check_finite and not np.all(np.isfinite(g)):
                    raise NonFiniteError(f"non-finite gradient in backward of {node.op}")
                _accumulate(inp, g)
            # intermediate adjoints are no longer needed
            node.output.grad = None
    finally:
        tape.clear()
