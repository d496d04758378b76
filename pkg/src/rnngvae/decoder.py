"""Generative model p(x, a) over NT / GEN / REDUCE derivations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import transitions as tr
from .autodiff import Tensor
from .config import TrainConfig
from .encoder import sample_index
from .layers import LSTM, Composer, ParamStore, TransitionStack


class GenerationTooLong(RuntimeError):
    pass


@dataclass
class JointScore:
    log_pa: Tensor
    log_px_given_a: Tensor
    log_joint: Tensor


class Decoder:
    """Generative parser whose step embedding sees only what was already generated.

    Features: stack summary, the last output-buffer LSTM state and the parent
    nonterminal. GEN is one action; its word comes from a separate softmax
    over the full vocabulary.
    """

    def __init__(self, config: TrainConfig, n_words: int, n_nt: int, store: ParamStore,
                 pretrained: np.ndarray | None = None):
        c = config
        H, M = c.dec_lstm_dim, c.dec_mlp
        self.n_nt = n_nt
        self.n_words = n_words
        self.limits = c.limits
        self.dropout = c.dec_dropout
        self.word_emb = store.embedding("dec.word", n_words, c.learned_dim)
        if pretrained is None:
            pretrained = np.zeros((n_words, c.pretrained_dim))
        self.pretrained = store.const(pretrained)
        self.input_dim = c.learned_dim + c.pretrained_dim
        self.nt_stack = store.embedding("dec.nt_stack", n_nt, self.input_dim)
        self.nt_emb = store.embedding("dec.nt", n_nt + 1, c.nt_dim)
        self.composer = Composer(store, "dec.compose", self.input_dim, c.nt_dim)
        self.stack_lstm = LSTM(store, "dec.stack", self.input_dim, H, c.lstm_layers)
        self.out_lstm = LSTM(store, "dec.output", self.input_dim, H, c.lstm_layers)
        self.W1 = store.matrix("dec.W1", M, 2 * H + c.nt_dim)
        self.b_d = store.vector("dec.b_d", M)
        self.W2 = store.matrix("dec.W2", M, M)
        self.action_emb = store.matrix("dec.action", tr.n_action_types(n_nt), M)
        self.action_b = store.vector("dec.action_b", tr.n_action_types(n_nt))
        self.word_out = store.matrix("dec.word_out", n_words, M)
        self.word_b = store.vector("dec.word_b", n_words)

    def start(self, rng=None, max_len: int | None = None) -> "DecoderState":
        return DecoderState(self, rng, max_len)

    def compose_subtree(self, children: Sequence[Tensor], nonterminal: int) -> Tensor:
        return self.composer(list(children), ad.lookup(self.nt_emb, nonterminal))

    def score_joint(self, words: Sequence[int], actions: Sequence[tr.Action], rng=None) -> JointScore:
        """(log p(a), log p(x|a), log p(x,a)) for a generative (or discriminative) derivation."""
        n_gen = sum(a.kind in (tr.GEN, tr.SHIFT) for a in actions)
        if n_gen != len(words):
            raise ValueError(f"{len(words)} words but {n_gen} terminal actions")
        st = self.start(rng, max_len=max(self.limits.max_len, len(words)))
        act_picks, word_picks = [], []
        k = 0
        for step, a in enumerate(actions):
            if st.is_terminal():
                raise tr.MalformedDerivation(step, "actions after the derivation finished")
            logits = st.action_logits()
            mask = st.mask()
            idx = tr.action_id(a)
            if not mask[idx]:
                raise tr.IllegalTransition(a, st.parser)
            act_picks.append(ad.log_softmax_pick(logits, idx, mask))
            if idx == tr.TERMINAL_ID:
                w = words[k]
                k += 1
                word_picks.append(ad.log_softmax_pick(st.word_logits(), int(w)))
                st.apply(tr.Action(tr.GEN, int(w)))
            else:
                st.apply(a)
        if not st.is_terminal():
            raise tr.MalformedDerivation(len(actions), "derivation is incomplete")
        log_pa = ad.add_n(act_picks)
        log_pxa = ad.add_n(word_picks)
        return JointScore(log_pa, log_pxa, ad.add(log_pa, log_pxa))

    def sample_generation(self, rng: np.random.Generator, max_len: int | None = None):
        """Ancestral sample -> (words, actions, log p(x,a) as float)."""
        cap = max_len if max_len is not None else self.limits.max_len
        st = self.start(max_len=cap)
        words, actions, total = [], [], 0.0
        with ad.no_grad():
            while not st.is_terminal():
                logp = st.action_logprobs()
                idx = sample_index(logp, rng)
                total += float(logp[idx])
                if idx == tr.TERMINAL_ID:
                    wlogp = st.word_logprobs()
                    w = sample_index(wlogp, rng)
                    total += float(wlogp[w])
                    words.append(w)
                    action = tr.Action(tr.GEN, w)
                else:
                    action = tr.action_from_id(idx, tr.GENERATIVE)
                st.apply(action)
                actions.append(action)
                if len(actions) > 10 * (cap + 1) * (self.limits.max_open_nt + 1):
                    raise GenerationTooLong(f"no terminal state after {len(actions)} actions")
        return words, actions, total


class DecoderState:
    def __init__(self, dec: Decoder, rng=None, max_len: int | None = None):
        self.dec = dec
        rate = dec.dropout if rng is not None else 0.0
        self.rate, self.rng = rate, rng
        limits = dec.limits if max_len is None else tr.Constraints(dec.limits.max_open_nt, max_len)
        self.limits = limits
        self.stack = TransitionStack(tr.initial_state(tr.GENERATIVE), limits, dec.stack_lstm,
                                     dec.nt_stack, dec.nt_emb, dec.composer, rate, rng)
        self.out_state = dec.out_lstm.initial()
        self._u = None
        self._action_logits = None
        self._word_logits = None

    @property
    def parser(self) -> tr.ParserState:
        return self.stack.state

    def is_terminal(self) -> bool:
        return self.stack.state.is_terminal()

    def features(self):
        """(stack summary, output-buffer summary, parent nonterminal)."""
        d = self.stack.lstm.summary()
        o = self.dec.out_lstm.output(self.out_state)
        n_t = ad.lookup(self.dec.nt_emb, self.stack.parent_index(self.dec.n_nt))
        return d, o, n_t

    def u(self) -> Tensor:
        if self._u is None:
            dec = self.dec
            hidden = ad.tanh(ad.linear(dec.W1, ad.concat(list(self.features())), dec.b_d))
            self._u = ad.linear(dec.W2, hidden)
        return self._u

    def action_logits(self) -> Tensor:
        if self._action_logits is None:
            self._action_logits = ad.linear(self.dec.action_emb, self.u(), self.dec.action_b)
        return self._action_logits

    def word_logits(self) -> Tensor:
        if self._word_logits is None:
            self._word_logits = ad.linear(self.dec.word_out, self.u(), self.dec.word_b)
        return self._word_logits

    def mask(self) -> np.ndarray:
        return tr.legal_mask(self.stack.state, self.dec.n_nt, self.limits)

    def action_logprobs(self) -> np.ndarray:
        return ad.masked_log_softmax(self.action_logits().value, self.mask())

    def word_logprobs(self) -> np.ndarray:
        if not self.mask()[tr.TERMINAL_ID]:
            raise tr.IllegalTransition(tr.Action(tr.GEN), self.stack.state)
        return ad.masked_log_softmax(self.word_logits().value)

    def apply(self, action: tr.Action) -> None:
        dec = self.dec
        emb = None
        if action.kind == tr.GEN:
            w = int(action.arg)
            emb = ad.concat([ad.lookup(dec.word_emb, w), ad.lookup(dec.pretrained, w)])
        self.stack.apply(action, emb)
        if emb is not None:
            self.out_state = dec.out_lstm.step(emb, self.out_state, self.rate, self.rng)
        self._u = self._action_logits = self._word_logits = None
