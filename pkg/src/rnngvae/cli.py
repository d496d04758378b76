"""Command-line entry point: oracle, train, parse, lm-eval, sample, score."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import transitions as tr
from ._kernels import BACKEND
from .config import TrainConfig
from .decoder import GenerationTooLong
from .evalscore import AlignmentError, prf, sentence_counts
from .inference import (DEFAULT_SAMPLES, corpus_perplexity, lm_elbo, lm_importance,
                        parse_greedy, parse_rerank, perplexity)
from .model import RNNGVAE, CheckpointError, substream
from .training import NumericAbort, train
from .transitions import Leaf, Tree
from .treebank import (UNKPOS, PretrainedFormatError, TreebankError, build_vocab, load_pretrained,
                       make_instance, read_sentences, read_treebank, sentence_instance)

log = logging.getLogger("rnngvae")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(target, args, inputs, outputs, config: TrainConfig | None = None, started=None):
    """JSON run record written next to an artifact as ``<artifact>.manifest.json``."""
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "seed": getattr(args, "seed", None),
        "build": f"rnngvae {__version__} ({BACKEND} kernels)",
        "config": None if config is None else config.to_text().splitlines(),
        "inputs": {str(p): _digest(p) for p in inputs if p is not None},
        "outputs": [str(p) for p in outputs],
        "wall_clock_seconds": None if started is None else round(time.time() - started, 3),
    }
    Path(str(target) + ".manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------

def cmd_oracle(args) -> int:
    mode = tr.DISC if args.mode == "disc" else tr.GENERATIVE
    out = Path(args.output)
    if not args.inverse:
        trees = read_treebank(args.input)
        with open(out, "w") as fa, open(str(out) + ".words", "w") as fw, \
                open(str(out) + ".tags", "w") as ft:
            for t in trees:
                fa.write(tr.format_actions(tr.oracle_from_tree(t, mode)) + "\n")
                fw.write(" ".join(t.words()) + "\n")
                ft.write(" ".join(p if p is not None else UNKPOS for p in t.tags()) + "\n")
        return EXIT_OK
    lines = Path(args.input).read_text().splitlines()
    words_path, tags_path = Path(args.input + ".words"), Path(args.input + ".tags")
    words = words_path.read_text().splitlines() if words_path.exists() else [None] * len(lines)
    tags = tags_path.read_text().splitlines() if tags_path.exists() else [None] * len(lines)
    with open(out, "w") as f:
        for i, line in enumerate(lines):
            actions = tr.parse_actions(line)
            if mode == tr.DISC and words[i] is None:
                raise ValueError(f"{words_path} is required to invert discriminative actions")
            toks = words[i].split() if words[i] is not None else [a.arg for a in actions if a.kind == tr.GEN]
            pos = tags[i].split() if tags[i] is not None else [None] * len(toks)
            leaves = [Leaf(w, None if p in (None, UNKPOS) else p) for w, p in zip(toks, pos)]
            f.write(tr.tree_from_actions(actions, leaves).to_string() + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _config_from_args(args) -> TrainConfig:
    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    overrides = {}
    for key in ("seed", "epochs", "dtype", "lambda_x", "lambda_a", "samples", "min_count", "lr"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return config.replace(**overrides) if overrides else config


def cmd_train(args) -> int:
    started = time.time()
    config = _config_from_args(args)
    trees = read_treebank(args.train)
    if not trees:
        raise ValueError(f"{args.train}: no trees")
    vocab = build_vocab(trees, config.min_count)
    pretrained = None
    if args.pretrained:
        table = load_pretrained(args.pretrained, vocab)
        if table.dim != config.pretrained_dim:
            raise ValueError(f"pretrained vectors have dimension {table.dim}, "
                             f"config says pretrained_dim = {config.pretrained_dim}")
        pretrained = table.matrix(vocab, np.float64)
    corpus = [make_instance(t, vocab) for t in trees]
    dev = None
    if args.dev:
        dev = [make_instance(t, vocab) for t in read_treebank(args.dev)]
    if config.lambda_a == 0:
        for inst in corpus:
            inst.gold_tree = inst.gold_disc = inst.gold_gen = None
    model = RNNGVAE(config, vocab, pretrained)
    out = Path(args.out)
    result = train(model, corpus, dev, config, out_dir=out,
                   on_epoch=lambda rec: print(rec.log_line(), flush=True) if not args.quiet else None)
    (out / "config.cfg").write_text(config.to_text())
    write_manifest(out / "best.ckpt", args, [args.train, args.dev, args.config, args.pretrained],
                   result.checkpoints + [out / "train.log"], config, started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parse / lm-eval / sample
# ---------------------------------------------------------------------------

def _instances(path, model: RNNGVAE):
    return [sentence_instance(toks, model.vocab, pos) for toks, pos in read_sentences(path)]


def _map(fn, n: int, threads: int):
    if threads <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


def cmd_parse(args) -> int:
    started = time.time()
    model = RNNGVAE.load(args.model)
    insts = _instances(args.input, model)

    def one(i):
        if args.method == "greedy":
            return parse_greedy(model, insts[i])
        return parse_rerank(model, insts[i], args.samples, substream(args.seed, "parse", i))

    results = _map(one, len(insts), args.threads)
    with open(args.output, "w") as f:
        for r in results:
            f.write(r.tree.to_string() + "\n")
    write_manifest(args.output, args, [args.model, args.input], [args.output], model.config, started)
    return EXIT_OK


def cmd_lm_eval(args) -> int:
    started = time.time()
    model = RNNGVAE.load(args.model)
    insts = _instances(args.input, model)
    fn = lm_importance if args.method == "importance" else lm_elbo

    def one(i):
        return fn(model, insts[i], args.samples, substream(args.seed, "lm", i))

    estimates = _map(one, len(insts), args.threads)
    n_tokens = sum(len(inst.words) for inst in insts)
    ppl = perplexity([e.logPx for e in estimates], n_tokens)
    with open(args.output, "w") as f:
        f.write("id\ttokens\tlogPx\tmethod\tk\tess\n")
        for i, (inst, e) in enumerate(zip(insts, estimates)):
            ess = "-" if e.ess is None else f"{e.ess:.4f}"
            f.write(f"{i}\t{' '.join(inst.tokens)}\t{e.logPx:.6f}\t{e.method}\t{e.k}\t{ess}\n")
        f.write(f"# perplexity\t{ppl:.6f}\ttokens\t{n_tokens}\tsentences\t{len(insts)}\n")
    if not args.quiet:
        print(f"perplexity {ppl:.4f} over {n_tokens} tokens ({args.method}, k={args.samples})")
    write_manifest(args.output, args, [args.model, args.input], [args.output], model.config, started)
    return EXIT_OK


def cmd_sample(args) -> int:
    model = RNNGVAE.load(args.model)
    vocab = model.vocab
    lines = []
    for i in range(args.n):
        rng = substream(args.seed, "generate", i)
        words, actions, logp = model.decoder.sample_generation(rng, args.max_len)
        named = [tr.Action(tr.NT, vocab.nonterminals[a.arg]) if a.kind == tr.NT
                 else tr.Action(tr.GEN, vocab.words[a.arg]) if a.kind == tr.GEN else a
                 for a in actions]
        tree = tr.tree_from_actions(named)
        lines.append(f"{logp:.6f}\t{tree.to_string(with_pos=False)}")
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------

def cmd_score(args) -> int:
    gold = read_treebank(args.gold)
    pred = read_treebank(args.pred)
    if len(gold) != len(pred):
        raise AlignmentError(min(len(gold), len(pred)),
                             f"{len(gold)} gold trees vs {len(pred)} predicted")
    m = g = p = 0
    rows = []
    for i, (gt, pt) in enumerate(zip(gold, pred)):
        s = sentence_counts(gt, pt, i)
        m, g, p = m + s.matched, g + s.gold, p + s.pred
        rows.append((i, s))
    precision, recall, f = prf(m, g, p)
    if args.verbose:
        print("id\tmatched\tgold\tpred\tP\tR\tF1")
        for i, s in rows:
            sp, sr, sf = prf(s.matched, s.gold, s.pred)
            print(f"{i}\t{s.matched}\t{s.gold}\t{s.pred}\t{sp:.2f}\t{sr:.2f}\t{sf:.2f}")
    print(f"precision\t{precision:.2f}")
    print(f"recall\t{recall:.2f}")
    print(f"F1\t{f:.2f}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="rnngvae", description=__doc__)
    ap.add_argument("--version", action="version", version=f"rnngvae {__version__}")
    ap.add_argument("-v", "--verbose-log", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("oracle", help="convert trees to action sequences and back")
    p.add_argument("--mode", choices=["disc", "gen"], default="disc")
    p.add_argument("--inverse", action="store_true",
                   help="read actions (plus .words/.tags sidecars) and write trees")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("train", help="train encoder and decoder")
    p.add_argument("--train", required=True, help="bracketed training treebank")
    p.add_argument("--dev", help="bracketed development treebank")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--pretrained", help="whitespace-separated word vectors")
    p.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.add_argument("--lambda-x", dest="lambda_x", type=float)
    p.add_argument("--lambda-a", dest="lambda_a", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--min-count", dest="min_count", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--threads", type=int, default=1, help="training always runs single-threaded")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("parse", help="parse sentences or trees' yields")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="token lines or bracketed trees")
    p.add_argument("--output", required=True)
    p.add_argument("--method", choices=["greedy", "rerank"], default="greedy")
    p.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("lm-eval", help="per-sentence log p(x) and corpus perplexity")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--method", choices=["importance", "elbo"], default="importance")
    p.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_lm_eval)

    p = sub.add_parser("sample", help="draw trees and sentences from the generative model")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--output")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("score", help="labeled bracketing precision/recall/F1")
    p.add_argument("gold")
    p.add_argument("pred")
    p.add_argument("--verbose", action="store_true", help="per-sentence TSV")
    p.set_defaults(fn=cmd_score)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose_log else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except NumericAbort as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError, TreebankError, PretrainedFormatError, CheckpointError,
            AlignmentError, tr.TransitionError, GenerationTooLong) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
