"""Bidirectional LSTM layer as one fused op with hand-written BPTT.

Gate order inside the ``4H`` axis of the weights is input, forget, cell,
output. Both directions run in the same time loop via batched matmuls; the
backward direction sees the sequence reversed.
"""
from __future__ import annotations

import numpy as np

from .ops import _sigmoid
from .tensor import Tensor, make_output


def _to_ifog(w: np.ndarray, hidden: int) -> np.ndarray:
    """Reorder the gate axis (0) from i,f,g,o to i,f,o,g so sigmoid gates are contiguous."""
    h = hidden
    return np.concatenate([w[:2 * h], w[3 * h:], w[2 * h:3 * h]], axis=0)


def _from_ifog(w: np.ndarray, hidden: int, axis: int = -1) -> np.ndarray:
    h = hidden
    w = np.moveaxis(w, axis, 0)
    out = np.concatenate([w[:2 * h], w[3 * h:], w[2 * h:3 * h]], axis=0)
    return np.moveaxis(out, 0, axis)


def bilstm_layer(x: Tensor, w_ih_f: Tensor, w_hh_f: Tensor, b_f: Tensor,
                 w_ih_b: Tensor, w_hh_b: Tensor, b_b: Tensor) -> Tensor:
    """One bidirectional layer: ``x`` is ``(B, T, C)``, returns ``(B, T, 2H)``.

    Initial hidden and cell states are zero.
    """
    batch, steps, c_in = x.shape
    H = w_hh_f.shape[1]
    if w_ih_f.shape != (4 * H, c_in) or w_ih_b.shape != (4 * H, c_in):
        raise ValueError(f"input weights must be ({4 * H}, {c_in})")
    dtype = x.dtype
    w_ih = np.stack([_to_ifog(w_ih_f.data, H), _to_ifog(w_ih_b.data, H)])      # (2, 4H, C)
    w_hh_t = np.stack([_to_ifog(w_hh_f.data, H).T, _to_ifog(w_hh_b.data, H).T])  # (2, H, 4H)
    bias = np.stack([_to_ifog(b_f.data, H), _to_ifog(b_b.data, H)])[:, None, None, :]

    xs = np.stack([x.data, x.data[:, ::-1]])                        # (2, B, T, C)
    pre = np.matmul(xs, w_ih.transpose(0, 2, 1)[:, None]) + bias    # (2, B, T, 4H)
    pre = np.ascontiguousarray(pre.transpose(2, 0, 1, 3))           # (T, 2, B, 4H)

    acts = np.empty((steps, 2, batch, 4 * H), dtype=dtype)
    cells = np.empty((steps, 2, batch, H), dtype=dtype)
    hs = np.empty((steps, 2, batch, H), dtype=dtype)
    h = np.zeros((2, batch, H), dtype=dtype)
    c = np.zeros((2, batch, H), dtype=dtype)
    for t in range(steps):
        a = pre[t]
        a += np.matmul(h, w_hh_t)
        act = acts[t]
        act[..., :3 * H] = _sigmoid(a[..., :3 * H])
        np.tanh(a[..., 3 * H:], out=act[..., 3 * H:])
        c = act[..., H:2 * H] * c + act[..., :H] * act[..., 3 * H:]
        cells[t] = c
        h = act[..., 2 * H:3 * H] * np.tanh(c)
        hs[t] = h
    hs_bt = hs.transpose(1, 2, 0, 3)  # (2, B, T, H)
    out = np.concatenate([hs_bt[0], hs_bt[1][:, ::-1]], axis=-1)

    def backward(grad):
        g_h = np.stack([grad[..., :H], grad[..., H:][:, ::-1]]).transpose(2, 0, 1, 3)  # (T,2,B,H)
        g_h = np.ascontiguousarray(g_h)
        d_pre = np.empty_like(acts)
        dh_next = np.zeros((2, batch, H), dtype=dtype)
        dc_next = np.zeros((2, batch, H), dtype=dtype)
        w_hh = w_hh_t.transpose(0, 2, 1)  # (2, 4H, H)
        tanh_c = np.tanh(cells)
        zero = np.zeros((2, batch, H), dtype=dtype)
        for t in range(steps - 1, -1, -1):
            act = acts[t]
            i, f, o, g = act[..., :H], act[..., H:2 * H], act[..., 2 * H:3 * H], act[..., 3 * H:]
            tc = tanh_c[t]
            c_prev = cells[t - 1] if t > 0 else zero
            dh = g_h[t] + dh_next
            dc = dc_next + dh * o * (1 - tc * tc)
            d = d_pre[t]
            d[..., :H] = dc * g
            d[..., H:2 * H] = dc * c_prev
            d[..., 2 * H:3 * H] = dh * tc
            d[..., :3 * H] *= act[..., :3 * H] * (1 - act[..., :3 * H])
            d[..., 3 * H:] = dc * i * (1 - g * g)
            dc_next = dc * f
            dh_next = np.matmul(d, w_hh)
        h_prev = np.zeros_like(hs)
        h_prev[1:] = hs[:-1]
        flat_d = d_pre.transpose(1, 3, 0, 2).reshape(2, 4 * H, steps * batch)
        g_w_hh = np.matmul(flat_d, h_prev.transpose(1, 0, 2, 3).reshape(2, steps * batch, H))
        xs_tb = xs.transpose(0, 2, 1, 3).reshape(2, steps * batch, c_in)
        g_w_ih = np.matmul(flat_d, xs_tb)
        g_b = flat_d.sum(axis=2)
        dxs = np.matmul(d_pre.transpose(1, 2, 0, 3), w_ih[:, None])  # (2, B, T, C)
        gx = dxs[0] + dxs[1][:, ::-1]
        return (gx,
                _from_ifog(g_w_ih[0], H, 0), _from_ifog(g_w_hh[0], H, 0), _from_ifog(g_b[0], H),
                _from_ifog(g_w_ih[1], H, 0), _from_ifog(g_w_hh[1], H, 0), _from_ifog(g_b[1], H))

    return make_output(np.ascontiguousarray(out), (x, w_ih_f, w_hh_f, b_f, w_ih_b, w_hh_b, b_b),
                       backward, "bilstm_layer")
