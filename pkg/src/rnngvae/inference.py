"""Parsing and language-model estimates built on the trained pair of models."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import autodiff as ad
from . import transitions as tr
from .model import RNNGVAE, substream
from .transitions import Tree
from .treebank import Instance, instance_tree

DEFAULT_SAMPLES = 100


@dataclass
class ParseResult:
    tree: Tree
    actions: list[tr.Action]
    logQ: float
    logJoint: float | None
    method: str


@dataclass
class LMEstimate:
    method: str
    logPx: float
    k: int
    ess: float | None = None
    std_err: float | None = None


def _joint(model: RNNGVAE, inst: Instance, actions) -> float:
    return float(model.decoder.score_joint(inst.words, actions).log_joint.value)


def parse_greedy(model: RNNGVAE, inst: Instance, with_joint: bool = False) -> ParseResult:
    """Left-to-right argmax under q; lowest action id wins ties."""
    with ad.no_grad():
        actions, logq = model.encoder.greedy(inst.words, inst.tags)
        joint = _joint(model, inst, actions) if with_joint else None
    return ParseResult(instance_tree(actions, inst, model.vocab), actions, float(logq.value),
                       joint, "greedy-q")


def parse_rerank(model: RNNGVAE, inst: Instance, k: int = DEFAULT_SAMPLES,
                 rng: np.random.Generator | None = None) -> ParseResult:
    """Sample ``k`` derivations from q, add the greedy one, keep the best under p(x, a)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    with ad.no_grad():
        greedy, greedy_q = model.encoder.greedy(inst.words, inst.tags)
        pool: dict[tuple, float] = {tuple(greedy): float(greedy_q.value)}
        for _ in range(k):
            actions, logq = model.encoder.sample_actions(inst.words, inst.tags, rng)
            pool.setdefault(tuple(actions), float(logq.value))
        best, best_joint = None, -math.inf
        for actions in pool:
            joint = _joint(model, inst, actions)
            if joint > best_joint:
                best, best_joint = actions, joint
    best = list(best)
    return ParseResult(instance_tree(best, inst, model.vocab), best, pool[tuple(best)],
                       best_joint, "rerank-joint")


def log_weights(model: RNNGVAE, inst: Instance, k: int, rng: np.random.Generator) -> np.ndarray:
    """log p(x, a_i) - log q(a_i | x) for ``k`` draws a_i ~ q."""
    if k < 1:
        raise ValueError("k must be >= 1")
    out = np.empty(k)
    with ad.no_grad():
        for i in range(k):
            actions, logq = model.encoder.sample_actions(inst.words, inst.tags, rng)
            out[i] = _joint(model, inst, actions) - float(logq.value)
    return out


def lm_elbo(model: RNNGVAE, inst: Instance, k: int = DEFAULT_SAMPLES,
            rng: np.random.Generator | None = None) -> LMEstimate:
    """Monte Carlo lower bound on log p(x)."""
    lw = log_weights(model, inst, k, rng if rng is not None else np.random.default_rng(0))
    se = float(lw.std(ddof=1) / math.sqrt(k)) if k > 1 else None
    return LMEstimate("elbo", float(lw.mean()), k, None, se)


def effective_sample_size(lw: np.ndarray) -> float:
    w = np.exp(lw - lw.max())
    return float(w.sum() ** 2 / (w * w).sum())


def lm_importance(model: RNNGVAE, inst: Instance, k: int = DEFAULT_SAMPLES,
                  rng: np.random.Generator | None = None) -> LMEstimate:
    """Importance-sampling estimate of log p(x) with q(a|x) as proposal."""
    lw = log_weights(model, inst, k, rng if rng is not None else np.random.default_rng(0))
    return LMEstimate("importance", float(logsumexp(lw) - math.log(k)), k,
                      effective_sample_size(lw))


def perplexity(log_pxs: Sequence[float], n_tokens: int) -> float:
    """exp(total negative log-likelihood / token count)."""
    if n_tokens <= 0:
        raise ValueError("perplexity needs at least one token")
    return math.exp(-float(np.sum(log_pxs)) / n_tokens)


def corpus_perplexity(model: RNNGVAE, instances: Sequence[Instance], method: str = "importance",
                      k: int = DEFAULT_SAMPLES, seed: int = 1):
    """(perplexity, per-sentence estimates). Sentence i uses its own seeded stream."""
    if not instances:
        raise ValueError("empty corpus")
    fn = {"importance": lm_importance, "elbo": lm_elbo}[method]
    estimates = [fn(model, inst, k, substream(seed, "lm", i)) for i, inst in enumerate(instances)]
    n_tokens = sum(len(inst.words) for inst in instances)
    return perplexity([e.logPx for e in estimates], n_tokens), estimates
