"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor, backward, no_grad


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
               seed: int = 0, max_coords: int | None = None) -> float:
    """Max relative error between analytic and numeric gradients.

    The scalar probed is ``sum(r * fn(*inputs))`` for a fixed random ``r``.
    Every coordinate of every input with ``requires_grad`` is perturbed,
    unless ``max_coords`` caps a tensor, in which case a seeded subset is used.
    Relative error uses ``max(|analytic|, |numeric|, 1e-8)`` as denominator.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("grad_check requires float64 inputs")
        t.data = np.ascontiguousarray(t.data)
        t.grad = None
    out = fn(*inputs)
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteError("forward produced non-finite values")
    probe = rng.standard_normal(out.shape)
    backward(out, probe)

    def scalar() -> float:
        with no_grad():
            value = fn(*inputs).data
        if not np.all(np.isfinite(value)):
            raise NonFiniteError("forward produced non-finite values")
        return float(np.sum(probe * value))

    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + eps
            plus = scalar()
            flat[idx] = orig - eps
            minus = scalar()
            flat[idx] = orig
            numeric = (plus - minus) / (2 * eps)
            a = analytic.reshape(-1)[idx]
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    return worst


def adjoint_error(forward: Callable[[np.ndarray], np.ndarray],
                  adjoint: Callable[[np.ndarray], np.ndarray],
                  x: np.ndarray, y: np.ndarray) -> float:
    """Relative mismatch of ``<A x, y>`` against ``<x, A^T y>``."""
    lhs = float(np.vdot(forward(x), y))
    rhs = float(np.vdot(x, adjoint(y)))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-30)


def directional_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
                      seed: int = 0) -> dict[int, float]:
    """Per-tensor directional-derivative check.

    For each input tensor ``t`` a unit direction ``v`` is formed from a random
    unit vector plus the normalized analytic gradient, and ``<grad_t, v>`` is
    compared with the central difference of the probed scalar along ``v``.
    The gradient component keeps the compared quantity near ``|grad_t|``,
    far above the roundoff floor even where single coordinates have tiny
    gradients; the random component exposes errors in any direction.
    Returns the relative error per input index.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("directional_check requires float64 inputs")
        t.grad = None
    out = fn(*inputs)
    probe = rng.standard_normal(out.shape)
    backward(out, probe)

    def scalar() -> float:
        with no_grad():
            return float(np.sum(probe * fn(*inputs).data))

    errors = {}
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        v = rng.standard_normal(t.shape)
        v /= np.linalg.norm(v)
        g_norm = 0.0 if t.grad is None else float(np.linalg.norm(t.grad))
        if g_norm > 0:
            v = v + t.grad / g_norm
            v /= np.linalg.norm(v)
        analytic = 0.0 if t.grad is None else float(np.sum(t.grad * v))
        orig = t.data.copy()
        t.data = orig + eps * v
        plus = scalar()
        t.data = orig - eps * v
        minus = scalar()
        t.data = orig
        numeric = (plus - minus) / (2 * eps)
        errors[i] = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
    return errors
