"""A small reverse-mode automatic differentiation engine over numpy arrays.

Only what the two parsers need is here: vector/matrix affine maps,
concatenation, elementwise nonlinearities, a masked log-softmax, embedding
lookup with row-sparse gradients, dropout, a fused LSTM cell and fused
additive attention. There is no broadcasting; shapes must match exactly.

Leaves created with ``requires_grad=True`` are parameters: ``backward``
accumulates into their ``.grad`` and never clears it.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels as K

_local = threading.local()


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (this thread only); values only."""
    prev = grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


def grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, name=None):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return self.backward_fn is None

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class RowGrad:
    """Gradient that touches only ``rows`` of an embedding table."""

    __slots__ = ("rows", "values")

    def __init__(self, rows, values):
        self.rows = rows
        self.values = values


def parameter(value, name=None) -> Tensor:
    return Tensor(np.asarray(value), requires_grad=True, name=name)


def const(value, dtype=None) -> Tensor:
    return Tensor(np.asarray(value, dtype=dtype))


def _node(value, parents, backward_fn) -> Tensor:
    if getattr(_local, "enabled", True):
        for p in parents:
            if p.requires_grad:
                return Tensor(value, True, parents, backward_fn)
    return Tensor(value)


def _accumulate_leaf(leaf: Tensor, g):
    if leaf.grad is None:
        leaf.grad = np.zeros_like(leaf.value)
    if isinstance(g, RowGrad):
        np.add.at(leaf.grad, g.rows, g.values)
    else:
        leaf.grad += g


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and not p.is_leaf and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable parameter's ``.grad``."""
    if loss.value.size != 1 or loss.value.ndim != 0:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return
    if loss.is_leaf:
        _accumulate_leaf(loss, np.ones_like(loss.value))
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        pgrads = node.backward_fn(g)
        for p, pg in zip(node.parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if p.is_leaf:
                _accumulate_leaf(p, pg)
            else:
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    return _node(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _node(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.value, b.value
    return _node(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, s: float) -> Tensor:
    return _node(a.value * s, (a,), lambda g: (g * s,))


def add_n(xs: Sequence[Tensor]) -> Tensor:
    if len(xs) == 1:
        return xs[0]
    total = xs[0].value.copy()
    for x in xs[1:]:
        total = total + x.value
    return _node(total, tuple(xs), lambda g: (g,) * len(xs))


def total(x: Tensor) -> Tensor:
    """Sum of all entries, as a scalar."""
    shape = x.value.shape
    return _node(x.value.sum(), (x,), lambda g: (np.full(shape, g, dtype=x.value.dtype),))


def mean(xs: Sequence[Tensor]) -> Tensor:
    n = len(xs)
    if n == 1:
        return xs[0]
    acc = xs[0].value.copy()
    for x in xs[1:]:
        acc += x.value
    acc /= n

    def bw(g):
        share = g / n
        return (share,) * n

    return _node(acc, tuple(xs), bw)


def concat(xs: Sequence[Tensor]) -> Tensor:
    sizes = [x.value.shape[0] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(g[bounds[k]: bounds[k + 1]] for k in range(len(xs)))

    return _node(np.concatenate([x.value for x in xs]), tuple(xs), bw)


def stack_rows(xs: Sequence[Tensor]) -> Tensor:
    """Vectors -> matrix, one row per input."""
    return _node(np.stack([x.value for x in xs]), tuple(xs), lambda g: tuple(g))


def slice_(x: Tensor, start: int, stop: int) -> Tensor:
    n = x.value.shape[0]

    def bw(g):
        full = np.zeros(n, dtype=g.dtype)
        full[start:stop] = g
        return (full,)

    return _node(x.value[start:stop], (x,), bw)


def row(m: Tensor, i: int) -> Tensor:
    shape = m.value.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[i] = g
        return (full,)

    return _node(m.value[i], (m,), bw)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    return _node(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.value))
    return _node(y, (x,), lambda g: (g * y * (1.0 - y),))


def linear(W: Tensor, x: Tensor, b: Tensor | None = None) -> Tensor:
    """``W @ x (+ b)`` for a matrix ``W`` and vector ``x``."""
    Wv, xv = W.value, x.value
    y = Wv @ xv
    if b is None:
        return _node(y, (W, x), lambda g: (np.outer(g, xv), g @ Wv))
    y = y + b.value
    return _node(y, (W, x, b), lambda g: (np.outer(g, xv), g @ Wv, g))


def project_rows(M: Tensor, W: Tensor) -> Tensor:
    """``M @ W.T``: apply ``W`` to every row of ``M``."""
    Mv, Wv = M.value, W.value
    return _node(Mv @ Wv.T, (M, W), lambda g: (g @ Wv, g.T @ Mv))


def lookup(table: Tensor, idx: int) -> Tensor:
    """Row ``idx`` of an embedding table; the gradient stays row-sparse."""
    idx = int(idx)
    return _node(table.value[idx].copy(), (table,), lambda g: (RowGrad(idx, g),))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. Identity when ``rate`` is 0 or ``rng`` is None (eval mode)."""
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.value.shape) >= rate).astype(x.value.dtype) / (1.0 - rate)
    return _node(x.value * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------

def masked_log_softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Plain-array masked log-softmax (no graph). Masked entries are -inf."""
    if mask is None:
        mask = np.ones(logits.shape[0], dtype=np.bool_)
    return K.masked_log_softmax(logits, mask)


def log_softmax(logits: Tensor, mask: np.ndarray | None = None) -> Tensor:
    out = masked_log_softmax(logits.value, mask)
    p = np.exp(out)

    def bw(g):
        gg = np.where(np.isfinite(out), g, 0.0).astype(p.dtype)
        return (gg - p * gg.sum(),)

    return _node(out, (logits,), bw)


def softmax(logits: Tensor) -> Tensor:
    z = logits.value - logits.value.max()
    e = np.exp(z)
    p = e / e.sum()
    return _node(p, (logits,), lambda g: (p * (g - g @ p),))


def log_softmax_pick(logits: Tensor, index: int, mask: np.ndarray | None = None,
                     logp: np.ndarray | None = None) -> Tensor:
    """``log softmax(logits)[index]`` restricted to ``mask``.

    ``logp`` may carry an already computed masked log-softmax of
    ``logits.value`` (the sampler computes it anyway).
    """
    n = logits.value.shape[0]
    if not 0 <= index < n:
        raise IndexError(f"index {index} out of range for {n} classes")
    if mask is not None and not mask[index]:
        raise IndexError(f"index {index} is masked out")
    if logp is None:
        logp = masked_log_softmax(logits.value, mask)
    p = np.exp(logp)

    def bw(g):
        d = -g * p
        d[index] += g
        return (d,)

    return _node(logp[index].copy(), (logits,), bw)


# ---------------------------------------------------------------------------
# fused recurrent and attention ops
# ---------------------------------------------------------------------------

def lstm_cell(x: Tensor, state: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """One LSTM step. ``state`` and the result are ``[h; c]`` vectors of size 2H."""
    H = state.value.shape[0] // 2
    h = state.value[:H]
    c = state.value[H:]
    xv = x.value
    gates, tc, h_new, c_new = K.lstm_cell_forward(W.value, b.value, xv, h, c)

    def bw(g):
        dW, dz, dx, dh, dc = K.lstm_cell_backward(W.value, xv, h, c, gates, tc,
                                                  np.ascontiguousarray(g[:H]),
                                                  np.ascontiguousarray(g[H:]))
        return dx, np.concatenate((dh, dc)), dW, dz

    return _node(np.concatenate((h_new, c_new)), (x, state, W, b), bw)


def attention(query: Tensor, keys_proj: Tensor, keys: Tensor, Wq: Tensor, v: Tensor,
              start: int = 0) -> Tensor:
    """Additive attention of ``query`` over rows ``start:`` of ``keys``.

    ``keys_proj`` holds every key already multiplied by the key projection, so
    the per-step cost is one query projection plus the scoring pass.
    score_i = v . tanh(Wq q + Wk k_i); output = sum_i softmax(score)_i k_i.
    """
    n_rows = keys.value.shape[0]
    if start >= n_rows:
        raise ValueError("attention over an empty key set")
    qv = query.value
    qproj = Wq.value @ qv
    kp = keys_proj.value[start:]
    kv = keys.value[start:]
    out, alpha, t = K.attention_forward(qproj, kp, kv, v.value)

    def bw(g):
        dq, dt, dkeys, dv = K.attention_backward(kv, v.value, alpha, t, g)
        dquery = dq @ Wq.value
        dWq = np.outer(dq, qv)
        dkp_full = np.zeros_like(keys_proj.value)
        dkp_full[start:] = dt
        dk_full = np.zeros_like(keys.value)
        dk_full[start:] = dkeys
        return dquery, dkp_full, dk_full, dWq, dv

    node = _node(out, (query, keys_proj, keys, Wq, v), bw)
    return node


def attention_weights(query: Tensor, keys_proj: Tensor, keys: Tensor, Wq: Tensor, v: Tensor,
                      start: int = 0) -> np.ndarray:
    """The attention distribution alone (diagnostics and tests)."""
    qproj = Wq.value @ query.value
    _, alpha, _ = K.attention_forward(qproj, keys_proj.value[start:], keys.value[start:], v.value)
    return alpha


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradcheck(fn: Callable[[], Tensor], params: Iterable[Tensor], n_coords: int = 20,
              h: float = 1e-4, rng: np.random.Generator | None = None):
    """Compare backprop gradients against central differences.

    ``fn`` must rebuild the graph from the current parameter values on every
    call. Returns a list of ``(param_name, flat_index, analytic, numeric)``
    over ``n_coords`` coordinates sampled uniformly from all parameters.
    """
    params = list(params)
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    backward(fn())
    sizes = np.array([p.value.size for p in params])
    picks = []
    for _ in range(n_coords):
        k = int(rng.choice(len(params), p=sizes / sizes.sum()))
        picks.append((k, int(rng.integers(sizes[k]))))
    out = []
    for k, flat in picks:
        p = params[k]
        analytic = 0.0 if p.grad is None else float(p.grad.reshape(-1)[flat])
        view = p.value.reshape(-1)
        orig = view[flat]
        view[flat] = orig + h
        with no_grad():
            fp = float(fn().value)
        view[flat] = orig - h
        with no_grad():
            fm = float(fn().value)
        view[flat] = orig
        out.append((p.name or f"param{k}", flat, analytic, (fp - fm) / (2 * h)))
    return out
