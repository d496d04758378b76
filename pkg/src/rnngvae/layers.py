"""Parameter storage and the recurrent building blocks shared by both models."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ParamStore:
    """Named parameters, created in a fixed order so ids and init are reproducible."""

    def __init__(self, rng: np.random.Generator, dtype=np.float32):
        self.rng = rng
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}

    def _add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = ad.parameter(value.astype(self.dtype), name=name)
        self.params[name] = p
        return p

    def matrix(self, name: str, rows: int, cols: int) -> Tensor:
        bound = np.sqrt(6.0 / (rows + cols))
        return self._add(name, self.rng.uniform(-bound, bound, size=(rows, cols)))

    def embedding(self, name: str, rows: int, cols: int) -> Tensor:
        return self._add(name, self.rng.uniform(-0.1, 0.1, size=(rows, cols)))

    def vector(self, name: str, n: int, fill: float = 0.0) -> Tensor:
        return self._add(name, np.full(n, fill))

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.params.values())

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def const(self, value) -> Tensor:
        return ad.const(value, dtype=self.dtype)


class LSTM:
    """Stacked LSTM stepped one input at a time.

    A state is a list with one ``[h; c]`` tensor per layer. Dropout is applied
    to every layer's input when an rng is supplied.
    """

    def __init__(self, store: ParamStore, prefix: str, input_dim: int, hidden: int, layers: int):
        self.hidden = hidden
        self.layers = layers
        self.weights = []
        for k in range(layers):
            n_in = input_dim if k == 0 else hidden
            W = store.matrix(f"{prefix}.W{k}", 4 * hidden, n_in + hidden)
            b = np.zeros(4 * hidden)
            b[hidden: 2 * hidden] = 1.0  # forget gate
            bias = store._add(f"{prefix}.b{k}", b)
            self.weights.append((W, bias))
        self._zero = store.const(np.zeros(2 * hidden))
        self._zero_h = store.const(np.zeros(hidden))

    def initial(self) -> list[Tensor]:
        return [self._zero] * self.layers

    def step(self, x: Tensor, state: list[Tensor], rate: float = 0.0, rng=None) -> list[Tensor]:
        new = []
        inp = x
        for k, (W, b) in enumerate(self.weights):
            inp = ad.dropout(inp, rate, rng)
            s = ad.lstm_cell(inp, state[k], W, b)
            new.append(s)
            inp = ad.slice_(s, 0, self.hidden)
        return new

    def output(self, state: list[Tensor]) -> Tensor:
        top = state[-1]
        if top is self._zero:
            return self._zero_h
        return ad.slice_(top, 0, self.hidden)

    def run(self, xs, rate: float = 0.0, rng=None) -> list[Tensor]:
        state = self.initial()
        outs = []
        for x in xs:
            state = self.step(x, state, rate, rng)
            outs.append(self.output(state))
        return outs


class StackLSTM:
    """An LSTM whose summary follows a stack: ``pop`` restores the stored prior state."""

    def __init__(self, lstm: LSTM, rate: float = 0.0, rng=None):
        self.lstm = lstm
        self.rate = rate
        self.rng = rng
        self.states = [lstm.initial()]
        self.outputs = [lstm.output(self.states[0])]

    def push(self, x: Tensor) -> None:
        s = self.lstm.step(x, self.states[-1], self.rate, self.rng)
        self.states.append(s)
        self.outputs.append(self.lstm.output(s))

    def pop(self) -> None:
        if len(self.states) == 1:
            raise IndexError("pop from an empty stack-LSTM")
        self.states.pop()
        self.outputs.pop()

    def summary(self) -> Tensor:
        return self.outputs[-1]

    def __len__(self):
        return len(self.states) - 1


class BiLSTM:
    """Stacked bidirectional LSTM; layer k+1 reads ``[fwd_k; bwd_k]``."""

    def __init__(self, store: ParamStore, prefix: str, input_dim: int, hidden: int, layers: int):
        self.fwd = []
        self.bwd = []
        for k in range(layers):
            n_in = input_dim if k == 0 else 2 * hidden
            self.fwd.append(LSTM(store, f"{prefix}.fwd{k}", n_in, hidden, 1))
            self.bwd.append(LSTM(store, f"{prefix}.bwd{k}", n_in, hidden, 1))

    def run(self, xs: list[Tensor], rate: float = 0.0, rng=None) -> list[Tensor]:
        for f, b in zip(self.fwd, self.bwd):
            fo = f.run(xs, rate, rng)
            bo = b.run(xs[::-1], rate, rng)[::-1]
            xs = [ad.concat([x, y]) for x, y in zip(fo, bo)]
        return xs


class Composer:
    """Subtree embedding: tanh(W [mean(children); nt] + b)."""

    def __init__(self, store: ParamStore, prefix: str, item_dim: int, nt_dim: int):
        self.W = store.matrix(f"{prefix}.W", item_dim, item_dim + nt_dim)
        self.b = store.vector(f"{prefix}.b", item_dim)

    def __call__(self, children: list[Tensor], nt: Tensor) -> Tensor:
        if not children:
            raise ValueError("cannot compose a constituent with no children")
        return ad.tanh(ad.linear(self.W, ad.concat([ad.mean(children), nt]), self.b))


class Attention:
    """Additive attention with keys projected once per sentence."""

    def __init__(self, store: ParamStore, prefix: str, query_dim: int, key_dim: int, attn_dim: int):
        self.Wk = store.matrix(f"{prefix}.Wk", attn_dim, key_dim)
        self.Wq = store.matrix(f"{prefix}.Wq", attn_dim, query_dim)
        bound = np.sqrt(6.0 / (attn_dim + 1))
        self.v = store._add(f"{prefix}.v", store.rng.uniform(-bound, bound, size=attn_dim))

    def project_keys(self, keys: Tensor) -> Tensor:
        return ad.project_rows(keys, self.Wk)

    def __call__(self, query: Tensor, keys_proj: Tensor, keys: Tensor, start: int = 0) -> Tensor:
        return ad.attention(query, keys_proj, keys, self.Wq, self.v, start)


class TransitionStack:
    """A parser state mirrored by a stack-LSTM over its items' embeddings.

    ``nt_stack`` embeds open-nonterminal markers, ``nt_emb`` is the
    nonterminal table fed to the composer (its last row means "no parent").
    """

    def __init__(self, state, limits, lstm: LSTM, nt_stack: Tensor, nt_emb: Tensor,
                 composer: Composer, rate: float = 0.0, rng=None):
        from . import transitions as tr

        self._tr = tr
        self.state = state
        self.limits = limits
        self.lstm = StackLSTM(lstm, rate, rng)
        self.nt_stack = nt_stack
        self.nt_emb = nt_emb
        self.composer = composer
        self.items: list[Tensor] = []

    def push_nt(self, label: int) -> None:
        emb = ad.lookup(self.nt_stack, label)
        self.items.append(emb)
        self.lstm.push(emb)

    def push_terminal(self, emb: Tensor) -> None:
        self.items.append(emb)
        self.lstm.push(emb)

    def reduce(self) -> None:
        start = self.state.opens[-1]
        label = self.state.stack[start].label
        children = self.items[start + 1:]
        for _ in range(len(children) + 1):
            self.lstm.pop()
        del self.items[start:]
        composed = self.composer(children, ad.lookup(self.nt_emb, label))
        self.items.append(composed)
        self.lstm.push(composed)

    def apply(self, action, terminal_emb: Tensor | None = None) -> None:
        """Advance the parser state and the stack-LSTM together."""
        tr = self._tr
        new_state = tr.apply_action(self.state, action, self.limits)
        if action.kind == tr.REDUCE:
            self.reduce()
        elif action.kind == tr.NT:
            self.push_nt(action.arg)
        else:
            self.push_terminal(terminal_emb)
        self.state = new_state

    def parent_index(self, n_nt: int) -> int:
        p = self.state.parent_nt
        return n_nt if p is None else p
