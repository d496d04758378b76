"""Objectives and the optimisation loop.

The unsupervised term is the evidence lower bound
``E_q[log p(x,a) - log q(a|x)]``. Its decoder gradient is taken directly; the
encoder gradient uses the score-function estimator with a moving-average
baseline. The supervised term is ``log q(a*|x) + log p(a*)`` for the gold
derivation. Training maximises ``lambda_x * Lx + lambda_a * La``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig
from .model import RNNGVAE, substream
from .treebank import Instance

log = logging.getLogger(__name__)


class NumericAbort(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


@dataclass
class ObjectiveReport:
    Lx: float = 0.0
    La: float = 0.0
    L: float = 0.0
    baseline: float = 0.0
    grad_norm: float = 0.0


class Baseline:
    """Exponential moving average of the ELBO learning signal."""

    def __init__(self, decay: float = 0.95):
        self.decay = decay
        self.value: float | None = None

    def get(self, fallback: float) -> float:
        return fallback if self.value is None else self.value

    def update(self, signal: float) -> None:
        if self.value is None:
            self.value = signal
        else:
            self.value = self.decay * self.value + (1.0 - self.decay) * signal


def elbo_terms(model: RNNGVAE, inst: Instance, k: int, rng: np.random.Generator,
               baseline: Baseline, dropout_rng=None):
    """Surrogate whose gradient is the ELBO gradient estimate.

    Returns (surrogate, elbo_estimate, signals). ``surrogate`` has value
    ``mean log p(x,a_i) + mean (f_i - b) log q(a_i|x)``; only its gradient is
    meaningful.
    """
    if len(inst.words) == 0:
        raise ValueError("empty sentence")
    joints, logqs = [], []
    for _ in range(k):
        actions, logq = model.encoder.sample_actions(inst.words, inst.tags, rng, dropout_rng)
        js = model.decoder.score_joint(inst.words, actions, dropout_rng)
        joints.append(js.log_joint)
        logqs.append(logq)
    signals = np.array([float(j.value) - float(q.value) for j, q in zip(joints, logqs)])
    b = baseline.get(float(signals.mean()))
    terms = []
    for j, q, f in zip(joints, logqs, signals):
        terms.append(ad.add(j, ad.scale(q, float(f - b))))
    surrogate = ad.scale(ad.add_n(terms), 1.0 / k)
    return surrogate, float(signals.mean()), signals


def elbo_and_gradients(model: RNNGVAE, inst: Instance, k: int, rng: np.random.Generator,
                       baseline: Baseline, weight: float = 1.0, dropout_rng=None) -> ObjectiveReport:
    """Accumulate ``weight`` times the ELBO gradient estimate into ``.grad`` (ascent direction negated)."""
    surrogate, elbo, signals = elbo_terms(model, inst, k, rng, baseline, dropout_rng)
    ad.backward(ad.scale(surrogate, -weight))
    report = ObjectiveReport(Lx=elbo, baseline=baseline.get(elbo))
    baseline.update(float(signals.mean()))
    return report


def supervised_loss(model: RNNGVAE, inst: Instance, dropout_rng=None) -> Tensor:
    """La = log q(a*|x) + log p(a*) for the gold derivation a*."""
    if inst.gold_disc is None or inst.gold_gen is None:
        raise ValueError("supervised loss needs a gold derivation")
    logq = model.encoder.score_actions(inst.words, inst.tags, inst.gold_disc, dropout_rng)
    js = model.decoder.score_joint(inst.words, inst.gold_gen, dropout_rng)
    return ad.add(logq, js.log_pa)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        step = self.lr * math.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.value -= (step * m / (np.sqrt(v) + self.eps)).astype(p.value.dtype)


def grad_norm(params: Sequence[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def clip_gradients(params: Sequence[Tensor], max_norm: float) -> float:
    norm = grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


class Trainer:
    """Per-sentence updates on ``lambda_x * (-Lx) + lambda_a * (-La)``.

    Sentences without a gold tree contribute only the ELBO term.
    """

    def __init__(self, model: RNNGVAE, config: TrainConfig | None = None):
        self.model = model
        self.config = config or model.config
        c = self.config
        self.optimizer = Adam(model.params, c.lr, c.beta1, c.beta2, c.adam_eps)
        self.baseline = Baseline(c.baseline_decay)
        self.sample_rng = substream(c.seed, "sample")
        self.dropout_rng = substream(c.seed, "dropout")
        self.shuffle_rng = substream(c.seed, "shuffle")
        self.steps = 0

    def step(self, inst: Instance, index: int = -1) -> ObjectiveReport:
        c, model = self.config, self.model
        model.zero_grad()
        report = ObjectiveReport()
        terms = []
        if c.lambda_x > 0:
            surrogate, elbo, signals = elbo_terms(model, inst, c.samples, self.sample_rng,
                                                  self.baseline, self.dropout_rng)
            terms.append(ad.scale(surrogate, -c.lambda_x))
            report.Lx = elbo
            report.baseline = self.baseline.get(elbo)
            self.baseline.update(float(signals.mean()))
        if c.lambda_a > 0 and inst.gold_disc is not None:
            La = supervised_loss(model, inst, self.dropout_rng)
            terms.append(ad.scale(La, -c.lambda_a))
            report.La = float(La.value)
        report.L = c.lambda_x * report.Lx + c.lambda_a * report.La
        if not math.isfinite(report.L):
            self._abort("non-finite objective", index)
        if not terms:
            return report  # unlabeled sentence with lambda_x = 0: nothing to learn from
        ad.backward(ad.add_n(terms))
        report.grad_norm = clip_gradients(model.params, c.clip)
        if not math.isfinite(report.grad_norm):
            self._abort("non-finite gradient", index)
        self.optimizer.step()
        model.zero_grad()
        self.steps += 1
        return report

    def _abort(self, what: str, index: int):
        norms = {p.name: float(np.linalg.norm(p.value)) for p in self.model.params}
        worst = sorted(norms.items(), key=lambda kv: -kv[1])[:3]
        raise NumericAbort(f"{what} at step {self.steps}, instance {index}; "
                           f"largest parameter norms {worst}")

    def epoch(self, corpus: Sequence[Instance]) -> ObjectiveReport:
        order = self.shuffle_rng.permutation(len(corpus))
        total = ObjectiveReport()
        for idx in order:
            r = self.step(corpus[idx], int(idx))
            total.Lx += r.Lx
            total.La += r.La
            total.L += r.L
            total.grad_norm = max(total.grad_norm, r.grad_norm)
        n = max(len(corpus), 1)
        total.Lx /= n
        total.La /= n
        total.L /= n
        total.baseline = self.baseline.get(0.0)
        return total


def evaluate(model: RNNGVAE, corpus: Sequence[Instance], samples: int = 1, seed: int = 0):
    """Mean per-sentence (La, ELBO) in evaluation mode. La is None without gold trees.

    The ELBO draws use fixed per-sentence streams, so successive evaluations
    of a changing model share random numbers.
    """
    la_total, elbo_total, n_gold = 0.0, 0.0, 0
    with ad.no_grad():
        for i, inst in enumerate(corpus):
            if inst.gold_disc is not None:
                la_total += float(supervised_loss(model, inst).value)
                n_gold += 1
            rng = substream(seed, "dev", i)
            vals = []
            for _ in range(samples):
                actions, logq = model.encoder.sample_actions(inst.words, inst.tags, rng)
                js = model.decoder.score_joint(inst.words, actions)
                vals.append(float(js.log_joint.value) - float(logq.value))
            elbo_total += float(np.mean(vals))
    la = la_total / n_gold if n_gold else None
    return la, elbo_total / max(len(corpus), 1)


@dataclass
class EpochRecord:
    epoch: int
    train: ObjectiveReport
    dev_La: float | None
    dev_elbo: float
    best: bool

    def log_line(self) -> str:
        la = "nan" if self.dev_La is None else f"{self.dev_La:.6f}"
        return f"{self.epoch}\t{la}\t{self.dev_elbo:.6f}\t{'best' if self.best else '-'}"


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_bytes: bytes | None = None
    checkpoints: list[Path] = field(default_factory=list)


def train(model: RNNGVAE, corpus: Sequence[Instance], dev: Sequence[Instance] | None = None,
          config: TrainConfig | None = None, out_dir=None,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Run ``config.epochs`` epochs, validating after each and keeping the best model.

    Writes ``last.ckpt`` and ``best.ckpt`` plus ``train.log`` under ``out_dir``
    when given.
    """
    c = config or model.config
    if not corpus:
        raise ValueError("empty training corpus")
    if c.lambda_a > 0 and all(inst.gold_disc is None for inst in corpus):
        raise ValueError("lambda_a > 0 needs gold trees for at least some training sentences")
    dev = list(dev) if dev else list(corpus)
    trainer = Trainer(model, c)
    result = TrainResult()
    best = -math.inf
    out = Path(out_dir) if out_dir is not None else None
    logf = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        logf = open(out / "train.log", "w", encoding="utf-8")
        logf.write("epoch\tLa(dev)\tELBO(dev)\tbest\n")
    try:
        for epoch in range(1, c.epochs + 1):
            train_report = trainer.epoch(corpus)
            dev_la, dev_elbo = evaluate(model, dev, c.dev_samples, c.seed)
            score = c.lambda_x * dev_elbo + c.lambda_a * (dev_la if dev_la is not None else 0.0)
            improved = score > best
            if improved:
                best = score
                result.best_bytes = model.to_bytes()
            elif c.plateau_decay != 1.0:
                trainer.optimizer.lr *= c.plateau_decay
            rec = EpochRecord(epoch, train_report, dev_la, dev_elbo, improved)
            result.history.append(rec)
            log.info("epoch %s", rec.log_line())
            if logf is not None:
                logf.write(rec.log_line() + "\n")
                logf.flush()
            if out is not None:
                model.save(out / "last.ckpt")
                (out / "best.ckpt").write_bytes(result.best_bytes)
                result.checkpoints = [out / "last.ckpt", out / "best.ckpt"]
            if on_epoch is not None:
                on_epoch(rec)
    finally:
        if logf is not None:
            logf.close()
    return result
