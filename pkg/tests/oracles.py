"""Independent reference computations used by the tests.

Derivations are enumerated by a recursive walk written directly from the
legality rules, not by the package's own ``legal_actions``, so the two can
disagree if either is wrong.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from rnngvae.config import TrainConfig
from rnngvae.model import RNNGVAE
from rnngvae.transitions import Action
from rnngvae.treebank import UNK, UNKPOS, Instance, Vocab


def _walk(mode, n_nt, n_words, max_open, max_len, prefix, stack, opens, consumed, out):
    # stack items: "open" for an open marker, "done" for a word or closed subtree
    finished = len(stack) == 1 and stack[0] == "done" and opens == 0
    if finished and (mode == "gen" or consumed == n_words):
        out.append(list(prefix))
        return
    if finished:
        return
    room = consumed < n_words if mode == "disc" else consumed < max_len
    if room and opens < max_open and not (opens == 0 and stack):
        for x in range(n_nt):
            prefix.append(Action("NT", x))
            _walk(mode, n_nt, n_words, max_open, max_len, prefix, stack + ["open"], opens + 1,
                  consumed, out)
            prefix.pop()
    if room and opens > 0:
        prefix.append(Action("SHIFT") if mode == "disc" else Action("GEN"))
        _walk(mode, n_nt, n_words, max_open, max_len, prefix, stack + ["done"], opens, consumed + 1,
              out)
        prefix.pop()
    last_open = len(stack) - 1 - stack[::-1].index("open") if opens else -1
    can_reduce = opens > 0 and stack[-1] != "open"
    if mode == "disc" and opens == 1 and consumed < n_words:
        can_reduce = False
    if can_reduce:
        prefix.append(Action("REDUCE"))
        _walk(mode, n_nt, n_words, max_open, max_len, prefix, stack[:last_open] + ["done"],
              opens - 1, consumed, out)
        prefix.pop()


def disc_derivations(n_words: int, n_nt: int, max_open: int) -> list[list[Action]]:
    out: list = []
    _walk("disc", n_nt, n_words, max_open, 0, [], [], 0, 0, out)
    return out


def gen_skeletons(n_nt: int, max_open: int, max_len: int) -> list[list[Action]]:
    """Generative derivations with unfilled GEN slots (any number of words <= max_len)."""
    out: list = []
    _walk("gen", n_nt, 0, max_open, max_len, [], [], 0, 0, out)
    return out


def fill(skeleton, words):
    it = iter(words)
    return [Action("GEN", next(it)) if a.kind == "GEN" else a for a in skeleton]


def micro_vocab(n_words: int = 3, n_nt: int = 2) -> Vocab:
    words = [UNK] + [chr(ord("a") + i) for i in range(n_words - 1)]
    return Vocab(words, [f"X{i}" for i in range(n_nt)], [UNKPOS, "T"])


def micro_config(**kw) -> TrainConfig:
    base = dict(learned_dim=3, pretrained_dim=2, pos_dim=2, enc_lstm_dim=4, dec_lstm_dim=4,
                lstm_layers=1, nt_dim=3, enc_dropout=0.0, dec_dropout=0.0, max_open_nt=2,
                max_len=2, min_count=1, dtype="float64", seed=3)
    base.update(kw)
    return TrainConfig(**base)


def micro_model(n_words=3, n_nt=2, scale: float = 1.0, **kw) -> RNNGVAE:
    """Tiny float64 model; ``scale`` inflates the weights so distributions are far from uniform."""
    vocab = micro_vocab(n_words, n_nt)
    model = RNNGVAE(micro_config(**kw), vocab,
                    np.random.default_rng(11).normal(size=(n_words, kw.get("pretrained_dim", 2))))
    if scale != 1.0:
        for p in model.params:
            p.value *= scale
    return model


def raw_instance(word_ids, vocab: Vocab) -> Instance:
    return Instance(list(word_ids), [1] * len(word_ids), [vocab.words[w] for w in word_ids],
                    ["T"] * len(word_ids))


def all_sentences(n_words: int, max_len: int):
    for length in range(1, max_len + 1):
        yield from itertools.product(range(n_words), repeat=length)


def logsumexp(xs) -> float:
    m = max(xs)
    return m + math.log(sum(math.exp(x - m) for x in xs))


def bootstrap_se(log_weights: np.ndarray, n_boot: int = 500, seed: int = 0) -> float:
    """Bootstrap standard error of log(mean(exp(lw)))."""
    rng = np.random.default_rng(seed)
    k = len(log_weights)
    stats = []
    for _ in range(n_boot):
        lw = log_weights[rng.integers(0, k, k)]
        stats.append(logsumexp(lw) - math.log(k))
    return float(np.std(stats, ddof=1))


def hand_prf(matched: int, gold: int, pred: int):
    p = matched / pred * 100 if pred else 0.0
    r = matched / gold * 100 if gold else 0.0
    return p, r, (2 * p * r / (p + r) if p + r else 0.0)


def random_state_sums(model, n_states: int, seed: int = 0, max_words: int = 6):
    """Drive both models with random legal actions; collect the probability mass
    of every masked action distribution and every word distribution visited."""
    from rnngvae import autodiff as ad
    from rnngvae import transitions as tr

    rng = np.random.default_rng(seed)
    n_vocab = len(model.vocab.words)
    sums = []
    with ad.no_grad():
        while len(sums) < n_states:
            n = int(rng.integers(1, max_words + 1))
            words = [int(w) for w in rng.integers(0, n_vocab, n)]
            enc = model.encoder.start(words, [0] * n)
            while not enc.is_terminal() and len(sums) < n_states:
                lp = enc.action_logprobs()
                sums.append(float(np.exp(lp).sum()))
                legal = np.flatnonzero(enc.mask())
                enc.apply(tr.action_from_id(int(rng.choice(legal)), tr.DISC))
            dec = model.decoder.start(max_len=n)
            while not dec.is_terminal() and len(sums) < n_states:
                lp = dec.action_logprobs()
                sums.append(float(np.exp(lp).sum()))
                legal = np.flatnonzero(dec.mask())
                idx = int(rng.choice(legal))
                if idx == tr.TERMINAL_ID:
                    wl = dec.word_logprobs()
                    sums.append(float(np.exp(wl).sum()))
                    dec.apply(tr.Action(tr.GEN, int(rng.integers(n_vocab))))
                else:
                    dec.apply(tr.action_from_id(idx, tr.GENERATIVE))
    return np.array(sums[:n_states])


def enumerated_q_total(model, inst, n_nt: int) -> float:
    from rnngvae import autodiff as ad
    with ad.no_grad():
        return sum(math.exp(float(model.encoder.score_actions(inst.words, inst.tags, d).value))
                   for d in disc_derivations(len(inst.words), n_nt, model.config.max_open_nt))


def enumerated_log_px(model, word_ids, n_nt: int) -> float:
    """log sum_a p(x, a) over every generative derivation of ``word_ids``."""
    from rnngvae import autodiff as ad
    with ad.no_grad():
        lps = [float(model.decoder.score_joint(list(word_ids), fill(d, word_ids)).log_joint.value)
               for d in gen_derivations(len(word_ids), n_nt, model.config.max_open_nt,
                                        model.config.max_len)]
    return logsumexp(lps)


def gen_derivations(n_words: int, n_nt: int, max_open: int, max_len: int | None = None):
    """Generative skeletons with exactly ``n_words`` GEN slots."""
    return [s for s in gen_skeletons(n_nt, max_open, max(n_words, max_len or 0))
            if sum(a.kind == "GEN" for a in s) == n_words]


def enumerated_p_total(model, n_nt: int) -> float:
    from rnngvae import autodiff as ad
    n_vocab = len(model.vocab.words)
    c = model.config
    total = 0.0
    with ad.no_grad():
        for sk in gen_skeletons(n_nt, c.max_open_nt, c.max_len):
            L = sum(a.kind == "GEN" for a in sk)
            for x in itertools.product(range(n_vocab), repeat=L):
                total += math.exp(float(model.decoder.score_joint(list(x), fill(sk, x)).log_joint.value))
    return total
