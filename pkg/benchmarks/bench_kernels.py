"""Time the numba kernels against their numpy twins, then a full training step.

Run: python3 benchmarks/bench_kernels.py [--dim 128] [--repeat 2000]

The full-step timing uses whichever backend the package picked at import.
Pass --both to also time it in a subprocess with RNNGVAE_DISABLE_NUMBA=1.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from rnngvae import _kernels as K


def _best_of(fn, repeat: int, rounds: int = 3) -> float:
    best = float("inf")
    for _ in range(rounds):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn()
        best = min(best, (time.perf_counter() - t0) / repeat)
    return best


def kernel_table(dim: int, repeat: int, dtype) -> list[tuple[str, float, float | None]]:
    rng = np.random.default_rng(0)
    H = D = dim
    W = rng.normal(size=(4 * H, D + H)).astype(dtype)
    b, x = rng.normal(size=4 * H).astype(dtype), rng.normal(size=D).astype(dtype)
    h, c = rng.normal(size=H).astype(dtype), rng.normal(size=H).astype(dtype)
    gates, tc, _, _ = K.np_lstm_cell_forward(W, b, x, h, c)
    gh, gc = rng.normal(size=H).astype(dtype), rng.normal(size=H).astype(dtype)
    n = 40
    qproj, v = rng.normal(size=dim).astype(dtype), rng.normal(size=dim).astype(dtype)
    kp, keys = rng.normal(size=(n, dim)).astype(dtype), rng.normal(size=(n, dim)).astype(dtype)
    alpha, t = K.np_attention_forward(qproj, kp, keys, v)[1:3]
    g = rng.normal(size=dim).astype(dtype)
    logits = rng.normal(size=60).astype(dtype)
    mask = rng.random(60) < 0.5
    mask[0] = True

    cases = {
        "lstm_cell_forward": (W, b, x, h, c),
        "lstm_cell_backward": (W, x, h, c, gates, tc, gh, gc),
        "attention_forward": (qproj, kp, keys, v),
        "attention_backward": (keys, v, alpha, t, g),
        "masked_log_softmax": (logits, mask),
    }
    rows = []
    for name, args in cases.items():
        np_fn = getattr(K, "np_" + name)
        t_np = _best_of(lambda: np_fn(*args), repeat)
        t_nb = None
        if K.HAS_NUMBA:
            nb_fn = getattr(K, "nb_" + name)
            nb_fn(*args)  # compile outside the timing
            t_nb = _best_of(lambda: nb_fn(*args), repeat)
        rows.append((name, t_np, t_nb))
    return rows


def full_step(n_sentences: int = 20) -> float:
    """Seconds per sentence for one supervised + ELBO update on synthetic data."""
    from rnngvae.config import TrainConfig
    from rnngvae.model import RNNGVAE
    from rnngvae.synthetic import sample_treebank
    from rnngvae.training import Trainer
    from rnngvae.treebank import build_vocab, make_instance

    trees = sample_treebank(n_sentences, seed=1, max_words=20)
    vocab = build_vocab(trees, 1)
    cfg = TrainConfig(min_count=1, max_open_nt=10, seed=1)
    model = RNNGVAE(cfg, vocab)
    corpus = [make_instance(t, vocab) for t in trees]
    trainer = Trainer(model, cfg)
    trainer.step(corpus[0])  # warm-up (jit compilation)
    t0 = time.perf_counter()
    for inst in corpus:
        trainer.step(inst)
    return (time.perf_counter() - t0) / len(corpus)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    ap.add_argument("--both", action="store_true", help="also time the full step without numba")
    ap.add_argument("--step-only", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)

    if args.step_only:
        print(f"{full_step():.6f}")
        return 0

    print(f"backend at import: {K.BACKEND}")
    print(f"{'kernel':<22}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for name, t_np, t_nb in kernel_table(args.dim, args.repeat, np.dtype(args.dtype)):
        nb = f"{t_nb * 1e6:12.2f}" if t_nb is not None else f"{'-':>12}"
        sp = f"{t_np / t_nb:10.2f}" if t_nb else f"{'-':>10}"
        print(f"{name:<22}{t_np * 1e6:12.2f}{nb}{sp}")

    step = full_step()
    print(f"full training step ({K.BACKEND}): {step * 1e3:.1f} ms/sentence")
    if args.both and K.HAS_NUMBA:
        env = dict(os.environ, RNNGVAE_DISABLE_NUMBA="1")
        out = subprocess.run([sys.executable, __file__, "--step-only"], env=env,
                             capture_output=True, text=True, check=True)
        print(f"full training step (numpy): {float(out.stdout) * 1e3:.1f} ms/sentence")
    return 0


if __name__ == "__main__":
    sys.exit(main())
