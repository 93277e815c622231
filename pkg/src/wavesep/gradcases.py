"""Registry of finite-difference cases: every differentiable op plus the desk models.

Each case builds a float64 function and its inputs from a seed. Inputs to
piecewise-linear ops are kept away from their kinks so central differences
are well defined.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import Tensor, adjoint_error, backward, bilstm_layer, grad_check, no_grad, ops
from .autodiff.gradcheck import directional_check
from .models.convtasnet import ConvTasnetSpec, build_convtasnet
from .models.demucs import DemucsSpec, build_demucs, valid_length
from .training import loss_l1, loss_l2

Case = tuple[Callable[..., Tensor], list[Tensor]]


def _t(rng, *shape, away_from_zero: bool = False) -> Tensor:
    x = rng.standard_normal(shape)
    if away_from_zero:
        x = np.sign(x) * (0.1 + np.abs(x))
    return Tensor(x, requires_grad=True)


def _case_conv1d(rng, stride=1, dilation=1) -> Case:
    x, w, b = _t(rng, 2, 3, 23), _t(rng, 4, 3, 5), _t(rng, 4)
    return (lambda x, w, b: ops.conv1d(x, w, b, stride=stride, dilation=dilation)), [x, w, b]


def _case_bilstm(rng) -> Case:
    h, c = 3, 2
    tensors = [_t(rng, 2, 5, c)]
    for _ in range(2):
        tensors += [_t(rng, 4 * h, c), _t(rng, 4 * h, h), _t(rng, 4 * h)]
    return bilstm_layer, tensors


def _case_gln(rng) -> Case:
    return ops.global_layer_norm, [_t(rng, 2, 3, 7), _t(rng, 3), _t(rng, 3)]


OP_CASES: dict[str, Callable[[np.random.Generator], Case]] = {
    "add": lambda r: (ops.add, [_t(r, 3, 4), _t(r, 4)]),
    "sub": lambda r: (ops.sub, [_t(r, 3, 4), _t(r, 3, 1)]),
    "mul": lambda r: (ops.mul, [_t(r, 3, 4), _t(r, 3, 4)]),
    "absolute": lambda r: (ops.absolute, [_t(r, 3, 5, away_from_zero=True)]),
    "square": lambda r: (ops.square, [_t(r, 3, 5)]),
    "relu": lambda r: (ops.relu, [_t(r, 3, 5, away_from_zero=True)]),
    "sigmoid": lambda r: (ops.sigmoid, [_t(r, 3, 5)]),
    "tanh": lambda r: (ops.tanh, [_t(r, 3, 5)]),
    "prelu": lambda r: (ops.prelu, [_t(r, 2, 3, 6, away_from_zero=True), _t(r, 3)]),
    "glu": lambda r: (ops.glu, [_t(r, 2, 6, 5)]),
    "sum_all": lambda r: (ops.sum_all, [_t(r, 3, 4)]),
    "mean_all": lambda r: (ops.mean_all, [_t(r, 3, 4)]),
    "reshape": lambda r: ((lambda x: ops.reshape(x, (4, 3))), [_t(r, 2, 6)]),
    "transpose": lambda r: ((lambda x: ops.transpose(x, (2, 0, 1))), [_t(r, 2, 3, 4)]),
    "concat": lambda r: ((lambda a, b: ops.concat([a, b], axis=1)), [_t(r, 2, 3, 4), _t(r, 2, 2, 4)]),
    "time_slice": lambda r: ((lambda x: ops.time_slice(x, 2, 7)), [_t(r, 2, 3, 9)]),
    "pad": lambda r: ((lambda x: ops.pad(x, 2, 3)), [_t(r, 2, 3, 6)]),
    "pad_circular": lambda r: ((lambda x: ops.pad_circular(x, 2, 3)), [_t(r, 2, 3, 6)]),
    "fold_circular": lambda r: ((lambda x: ops.fold_circular(x, 3)), [_t(r, 2, 3, 9)]),
    "conv1d": _case_conv1d,
    "conv1d_strided": lambda r: _case_conv1d(r, stride=3),
    "conv1d_dilated": lambda r: _case_conv1d(r, dilation=2),
    "conv_transpose1d": lambda r: ((lambda x, w, b: ops.conv_transpose1d(x, w, b, stride=3)),
                                   [_t(r, 2, 3, 7), _t(r, 3, 4, 5), _t(r, 4)]),
    "depthwise_conv1d": lambda r: ((lambda x, w, b: ops.depthwise_conv1d(x, w, b, dilation=2)),
                                   [_t(r, 2, 3, 15), _t(r, 3, 1, 3), _t(r, 3)]),
    "pointwise_conv1d": lambda r: (ops.pointwise_conv1d, [_t(r, 2, 3, 6), _t(r, 4, 3, 1), _t(r, 4)]),
    "linear": lambda r: (ops.linear, [_t(r, 2, 5, 3), _t(r, 4, 3), _t(r, 4)]),
    "global_layer_norm": _case_gln,
    "bilstm_layer": _case_bilstm,
    "loss_l1": lambda r: ((lambda e: loss_l1(e, np.zeros((2, 4, 2, 5)))),
                          [_t(r, 2, 4, 2, 5, away_from_zero=True)]),
    "loss_l2": lambda r: ((lambda e: loss_l2(e, np.ones((2, 4, 2, 5)))), [_t(r, 2, 4, 2, 5)]),
}

MODEL_NAMES = ("demucs", "convtasnet")


def run_op_check(name: str, seed: int = 0) -> float:
    if name not in OP_CASES:
        raise KeyError(f"unknown op {name!r}; registered ops: {', '.join(sorted(OP_CASES))}")
    fn, inputs = OP_CASES[name](np.random.default_rng(seed))
    return grad_check(fn, inputs, seed=seed)


def desk_model(kind: str, seed: int = 0):
    """Desk-preset model in float64 together with a short valid input."""
    rng = np.random.default_rng([seed, 7])
    if kind == "demucs":
        spec = DemucsSpec.desk()
        model = build_demucs(spec, seed, dtype=np.float64)
        # long enough for several LSTM time steps
        length = valid_length(4 * spec.stride ** spec.depth, spec)
    elif kind == "convtasnet":
        spec = ConvTasnetSpec.desk()
        model = build_convtasnet(spec, seed, dtype=np.float64)
        length = 20 * spec.frontend_stride
    else:
        raise KeyError(f"unknown model {kind!r}; expected one of {', '.join(MODEL_NAMES)}")
    x = Tensor(rng.standard_normal((1, spec.audio_channels, length)), requires_grad=True)
    return model, x


def model_check_errors(kind: str, seed: int = 0, eps: float = 1e-6) -> dict[str, float]:
    """Directional finite-difference error for the input and every parameter tensor.

    Per-coordinate probing is not used on whole models: deep parameters have
    coordinate gradients near 1e-9, where float64 roundoff in the difference
    quotient dominates. The small step keeps ReLU kink crossings rare.
    """
    model, x = desk_model(kind, seed)
    names = ["input"] + [n for n, _ in model.named_parameters()]
    errors = directional_check(lambda x, *params: model(x), [x] + model.parameters(),
                               eps=eps, seed=seed)
    return {names[i]: e for i, e in errors.items()}


def run_model_check(kind: str, seed: int = 0) -> float:
    return max(model_check_errors(kind, seed).values())


# ---------------------------------------------------------------------------
# linear operators: <A x, y> = <x, A^T y>, with A^T taken from reverse mode

LinearCase = Callable[[np.random.Generator], Callable[[Tensor], Tensor]]


def _weighted(op, shape, **kw) -> LinearCase:
    def make(rng):
        w = Tensor(rng.standard_normal(shape))
        return lambda x: op(x, w, **kw)
    return make


LINEAR_CASES: dict[str, LinearCase] = {
    "conv1d": _weighted(ops.conv1d, (3, 2, 4), stride=2, dilation=2),
    "conv_transpose1d": _weighted(ops.conv_transpose1d, (2, 3, 5), stride=3),
    "depthwise_conv1d": _weighted(ops.depthwise_conv1d, (2, 1, 3), dilation=3),
    "pointwise_conv1d": _weighted(ops.pointwise_conv1d, (4, 2, 1)),
    "linear": lambda r: (lambda w: (lambda x: ops.linear(ops.transpose(x, (0, 2, 1)), w)))(
        Tensor(r.standard_normal((5, 2)))),
    "pad": lambda r: (lambda x: ops.pad(x, 3, 1)),
    "pad_circular": lambda r: (lambda x: ops.pad_circular(x, 2, 4)),
    "fold_circular": lambda r: (lambda x: ops.fold_circular(x, 3)),
    "time_slice": lambda r: (lambda x: ops.time_slice(x, 2, 9)),
    "transpose": lambda r: (lambda x: ops.transpose(x, (2, 0, 1))),
    "reshape": lambda r: (lambda x: ops.reshape(x, (-1,))),
    "sum_all": lambda r: ops.sum_all,
    "mean_all": lambda r: ops.mean_all,
}


def run_adjoint_check(name: str, instances: int = 100, seed: int = 0) -> float:
    """Worst relative adjoint mismatch of a linear op over random inputs and cotangents."""
    if name not in LINEAR_CASES:
        raise KeyError(f"unknown linear op {name!r}; registered: {', '.join(sorted(LINEAR_CASES))}")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        fn = LINEAR_CASES[name](rng)
        x = rng.standard_normal((2, 2, int(rng.integers(20, 40))))
        with no_grad():
            y = rng.standard_normal(fn(Tensor(x)).shape)

        def transpose(v, shape=x.shape, fn=fn):
            leaf = Tensor(np.zeros(shape), requires_grad=True)
            backward(fn(leaf), v)
            return leaf.grad

        worst = max(worst, adjoint_error(lambda v: fn(Tensor(v)).data, transpose, x, y))
    return worst
