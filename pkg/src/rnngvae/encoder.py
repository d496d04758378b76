"""Discriminative recognition model q(a | x) over NT / SHIFT / REDUCE derivations."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import transitions as tr
from .autodiff import Tensor
from .config import TrainConfig
from .layers import LSTM, Attention, BiLSTM, Composer, ParamStore, TransitionStack


def sample_index(logp: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from a (masked) log-distribution."""
    p = np.exp(logp.astype(np.float64))
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    idx = min(idx, len(p) - 1)
    while p[idx] == 0.0:  # only reachable through rounding at the upper edge
        idx -= 1
    return idx


class Encoder:
    """Scores, samples and greedily decodes discriminative derivations.

    The step state embedding reads the stack summary, the top-of-buffer
    BiLSTM vector, an attention summary of the remaining buffer and the
    parent nonterminal. Illegal actions are masked before normalisation.
    """

    def __init__(self, config: TrainConfig, n_words: int, n_nt: int, n_pos: int,
                 store: ParamStore, pretrained: np.ndarray | None = None):
        c = config
        H, M = c.enc_lstm_dim, c.enc_mlp
        self.n_nt = n_nt
        self.limits = c.limits
        self.dropout = c.enc_dropout
        self.word_emb = store.embedding("enc.word", n_words, c.learned_dim)
        self.pos_emb = store.embedding("enc.pos", n_pos, c.pos_dim)
        if pretrained is None:
            pretrained = np.zeros((n_words, c.pretrained_dim))
        self.pretrained = store.const(pretrained)
        self.input_dim = c.learned_dim + c.pretrained_dim + c.pos_dim
        self.nt_stack = store.embedding("enc.nt_stack", n_nt, self.input_dim)
        self.nt_emb = store.embedding("enc.nt", n_nt + 1, c.nt_dim)
        self.composer = Composer(store, "enc.compose", self.input_dim, c.nt_dim)
        self.stack_lstm = LSTM(store, "enc.stack", self.input_dim, H, c.lstm_layers)
        self.bilstm = BiLSTM(store, "enc.buffer", self.input_dim, H, c.lstm_layers)
        self.buffer_null = store.embedding("enc.buffer_null", 1, 2 * H)
        self.attention = Attention(store, "enc.attn", H, 2 * H, c.attn)
        self.W3 = store.matrix("enc.W3", M, H + 4 * H + c.nt_dim)
        self.b_e = store.vector("enc.b_e", M)
        self.W4 = store.matrix("enc.W4", M, M)
        self.action_emb = store.matrix("enc.action", tr.n_action_types(n_nt), M)
        self.action_b = store.vector("enc.action_b", tr.n_action_types(n_nt))

    def start(self, words: Sequence[int], tags: Sequence[int], rng=None) -> "EncoderState":
        return EncoderState(self, words, tags, rng)

    def run(self, words, tags, choose: Callable[[int, np.ndarray], int], rng=None):
        """Drive one derivation; ``choose(step, logp)`` returns the next action id.

        Returns (actions, log q tensor).
        """
        if len(words) == 0:
            raise ValueError("cannot parse an empty sentence")
        st = self.start(words, tags, rng)
        actions, picks = [], []
        while not st.is_terminal():
            logits = st.logits()
            mask = st.mask()
            logp = ad.masked_log_softmax(logits.value, mask)
            idx = choose(len(actions), logp)
            if not mask[idx]:
                raise tr.IllegalTransition(tr.action_from_id(idx, tr.DISC), st.parser)
            picks.append(ad.log_softmax_pick(logits, idx, mask, logp))
            action = tr.action_from_id(idx, tr.DISC)
            st.apply(action)
            actions.append(action)
        return actions, ad.add_n(picks)

    def score_actions(self, words, tags, actions: Sequence[tr.Action], rng=None) -> Tensor:
        """log q(a | x) as a differentiable scalar."""
        ids = [tr.action_id(a) for a in actions]

        def forced(t, logp):
            if t >= len(ids):
                raise tr.MalformedDerivation(t, "derivation ended before a terminal state")
            return ids[t]

        out, logq = self.run(words, tags, forced, rng)
        if len(out) != len(ids):
            raise tr.MalformedDerivation(len(out), "actions after the derivation finished")
        return logq

    def sample_actions(self, words, tags, rng: np.random.Generator, dropout_rng=None):
        return self.run(words, tags, lambda t, logp: sample_index(logp, rng), dropout_rng)

    def greedy(self, words, tags):
        """Argmax decoding; ties go to the lowest action id."""
        return self.run(words, tags, lambda t, logp: int(np.argmax(logp)))


class EncoderState:
    """Per-sentence encoder state: parser configuration, stack-LSTM and cached v_t."""

    def __init__(self, enc: Encoder, words, tags, rng=None):
        self.enc = enc
        self.n = len(words)
        rate = enc.dropout if rng is not None else 0.0
        self.inputs = [ad.concat([ad.lookup(enc.word_emb, w), ad.lookup(enc.pretrained, w),
                                  ad.lookup(enc.pos_emb, t)]) for w, t in zip(words, tags)]
        self.buffer = ad.stack_rows(enc.bilstm.run(self.inputs, rate, rng))
        self.keys_proj = enc.attention.project_keys(self.buffer)
        self.stack = TransitionStack(tr.initial_state(tr.DISC, [tr.Leaf(i) for i in range(self.n)]),
                                     enc.limits, enc.stack_lstm, enc.nt_stack, enc.nt_emb,
                                     enc.composer, rate, rng)
        self._logits = None

    @property
    def parser(self) -> tr.ParserState:
        return self.stack.state

    @property
    def position(self) -> int:
        return self.n - len(self.stack.state.buffer)

    def is_terminal(self) -> bool:
        return self.stack.state.is_terminal()

    def features(self):
        """(stack summary, top-of-buffer, attended buffer, parent nonterminal)."""
        enc = self.enc
        e = self.stack.lstm.summary()
        pos = self.position
        if pos < self.n:
            i = ad.row(self.buffer, pos)
            i_bar = enc.attention(e, self.keys_proj, self.buffer, start=pos)
        else:
            i = i_bar = ad.row(enc.buffer_null, 0)
        n_t = ad.lookup(enc.nt_emb, self.stack.parent_index(enc.n_nt))
        return e, i, i_bar, n_t

    def v(self) -> Tensor:
        enc = self.enc
        hidden = ad.tanh(ad.linear(enc.W3, ad.concat(list(self.features())), enc.b_e))
        return ad.linear(enc.W4, hidden)

    def logits(self) -> Tensor:
        if self._logits is None:
            self._logits = ad.linear(self.enc.action_emb, self.v(), self.enc.action_b)
        return self._logits

    def mask(self) -> np.ndarray:
        return tr.legal_mask(self.stack.state, self.enc.n_nt, self.enc.limits)

    def action_logprobs(self) -> np.ndarray:
        """Masked log-distribution over action ids (-inf for illegal actions)."""
        return ad.masked_log_softmax(self.logits().value, self.mask())

    def apply(self, action: tr.Action) -> None:
        emb = self.inputs[self.position] if action.kind == tr.SHIFT else None
        self.stack.apply(action, emb)
        self._logits = None
