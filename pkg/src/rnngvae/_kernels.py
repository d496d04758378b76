"""Hot numeric kernels: fused LSTM cell, masked log-softmax, additive attention.

Every kernel has a pure-numpy twin. Which one is used is decided once at
import time: numba when importable, unless ``RNNGVAE_DISABLE_NUMBA=1``.
Both paths compute the same math; only the numba path fuses the elementwise
loops. With numba on, the two forward kernels still use numpy, which is
faster for them. Results agree to rounding, not bit-for-bit, so a run is reproducible
within one path.
"""
from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("RNNGVAE_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError("disabled by RNNGVAE_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

BACKEND = "numba" if HAS_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------

def np_lstm_cell_forward(W, b, x, h, c):
    """Gate order is (input, forget, output, candidate)."""
    H = h.shape[0]
    z = W @ np.concatenate((x, h)) + b
    gates = np.empty_like(z)
    gates[: 3 * H] = 1.0 / (1.0 + np.exp(-z[: 3 * H]))
    gates[3 * H:] = np.tanh(z[3 * H:])
    c_new = gates[H: 2 * H] * c + gates[:H] * gates[3 * H:]
    tc = np.tanh(c_new)
    h_new = gates[2 * H: 3 * H] * tc
    return gates, tc, h_new, c_new


def np_lstm_cell_backward(W, x, h, c, gates, tc, gh, gc):
    H = h.shape[0]
    i = gates[:H]
    f = gates[H: 2 * H]
    o = gates[2 * H: 3 * H]
    g = gates[3 * H:]
    dc = gc + gh * o * (1.0 - tc * tc)
    dz = np.empty_like(gates)
    dz[:H] = dc * g * i * (1.0 - i)
    dz[H: 2 * H] = dc * c * f * (1.0 - f)
    dz[2 * H: 3 * H] = gh * tc * o * (1.0 - o)
    dz[3 * H:] = dc * i * (1.0 - g * g)
    n = x.shape[0]
    dW = np.outer(dz, np.concatenate((x, h)))
    dxh = dz @ W
    return dW, dz, dxh[:n], dxh[n:], dc * f


def np_masked_log_softmax(logits, mask):
    """Log-softmax over entries where ``mask`` is true; masked-out entries get -inf."""
    out = np.full_like(logits, -np.inf)
    sel = logits[mask]
    m = sel.max()
    shifted = sel - m
    out[mask] = shifted - np.log(np.exp(shifted).sum())
    return out


def np_attention_forward(qproj, keys_proj, keys, v):
    t = np.tanh(keys_proj + qproj)
    scores = t @ v
    m = scores.max()
    e = np.exp(scores - m)
    alpha = e / e.sum()
    return alpha @ keys, alpha, t


def np_attention_backward(keys, v, alpha, t, g):
    dalpha = keys @ g
    dscores = alpha * (dalpha - alpha @ dalpha)
    dt = np.outer(dscores, v) * (1.0 - t * t)
    dkeys = np.outer(alpha, g)
    dv = t.T @ dscores
    dqproj = dt.sum(axis=0)
    return dqproj, dt, dkeys, dv


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True, fastmath=False)
    def nb_lstm_cell_forward(W, b, x, h, c):
        H = h.shape[0]
        n = x.shape[0]
        xh = np.empty(n + H, dtype=x.dtype)
        xh[:n] = x
        xh[n:] = h
        z = np.dot(W, xh) + b
        gates = np.empty_like(z)
        c_new = np.empty_like(c)
        tc = np.empty_like(c)
        h_new = np.empty_like(h)
        for k in range(H):
            i = 1.0 / (1.0 + np.exp(-z[k]))
            f = 1.0 / (1.0 + np.exp(-z[H + k]))
            o = 1.0 / (1.0 + np.exp(-z[2 * H + k]))
            g = np.tanh(z[3 * H + k])
            gates[k] = i
            gates[H + k] = f
            gates[2 * H + k] = o
            gates[3 * H + k] = g
            cn = f * c[k] + i * g
            c_new[k] = cn
            t = np.tanh(cn)
            tc[k] = t
            h_new[k] = o * t
        return gates, tc, h_new, c_new

    @njit(cache=True, fastmath=False)
    def nb_lstm_cell_backward(W, x, h, c, gates, tc, gh, gc):
        H = h.shape[0]
        n = x.shape[0]
        dz = np.empty_like(gates)
        dc_prev = np.empty_like(c)
        for k in range(H):
            i = gates[k]
            f = gates[H + k]
            o = gates[2 * H + k]
            g = gates[3 * H + k]
            t = tc[k]
            dc = gc[k] + gh[k] * o * (1.0 - t * t)
            dz[k] = dc * g * i * (1.0 - i)
            dz[H + k] = dc * c[k] * f * (1.0 - f)
            dz[2 * H + k] = gh[k] * t * o * (1.0 - o)
            dz[3 * H + k] = dc * i * (1.0 - g * g)
            dc_prev[k] = dc * f
        xh = np.empty(n + H, dtype=x.dtype)
        xh[:n] = x
        xh[n:] = h
        dW = np.outer(dz, xh)
        dxh = np.dot(dz, W)
        return dW, dz, dxh[:n].copy(), dxh[n:].copy(), dc_prev

    @njit(cache=True, fastmath=False)
    def nb_masked_log_softmax(logits, mask):
        out = np.empty_like(logits)
        m = -np.inf
        for k in range(logits.shape[0]):
            if mask[k] and logits[k] > m:
                m = logits[k]
        s = 0.0
        for k in range(logits.shape[0]):
            if mask[k]:
                s += np.exp(logits[k] - m)
        ls = np.log(s)
        for k in range(logits.shape[0]):
            if mask[k]:
                out[k] = logits[k] - m - ls
            else:
                out[k] = -np.inf
        return out

    @njit(cache=True, fastmath=False)
    def nb_attention_forward(qproj, keys_proj, keys, v):
        n, a = keys_proj.shape
        t = np.empty_like(keys_proj)
        scores = np.empty(n, dtype=keys.dtype)
        m = -np.inf
        for r in range(n):
            s = 0.0
            for j in range(a):
                tv = np.tanh(keys_proj[r, j] + qproj[j])
                t[r, j] = tv
                s += tv * v[j]
            scores[r] = s
            if s > m:
                m = s
        total = 0.0
        for r in range(n):
            scores[r] = np.exp(scores[r] - m)
            total += scores[r]
        alpha = (scores / total).astype(keys.dtype)
        return np.dot(alpha, keys), alpha, t

    @njit(cache=True, fastmath=False)
    def nb_attention_backward(keys, v, alpha, t, g):
        n, a = t.shape
        dalpha = np.dot(keys, g)
        mean = 0.0
        for r in range(n):
            mean += alpha[r] * dalpha[r]
        dt = np.empty_like(t)
        dv = np.zeros_like(v)
        dq = np.zeros(a, dtype=t.dtype)
        for r in range(n):
            ds = alpha[r] * (dalpha[r] - mean)
            for j in range(a):
                tv = t[r, j]
                dv[j] += tv * ds
                d = ds * v[j] * (1.0 - tv * tv)
                dt[r, j] = d
                dq[j] += d
        dkeys = np.outer(alpha, g)
        return dq, dt, dkeys, dv

    # the forward kernels are dominated by tanh/exp, where numpy's vectorized
    # transcendentals beat numba's scalar calls (see benchmarks/bench_kernels.py)
    lstm_cell_forward = np_lstm_cell_forward
    lstm_cell_backward = nb_lstm_cell_backward
    masked_log_softmax = nb_masked_log_softmax
    attention_forward = np_attention_forward
    attention_backward = nb_attention_backward
else:
    lstm_cell_forward = np_lstm_cell_forward
    lstm_cell_backward = np_lstm_cell_backward
    masked_log_softmax = np_masked_log_softmax
    attention_forward = np_attention_forward
    attention_backward = np_attention_backward
