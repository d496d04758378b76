"""Bracketed treebank reading, vocabularies and training instances."""
from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .transitions import (DISC, GENERATIVE, Action, Leaf, Tree, oracle_from_tree,
                          tree_from_actions)

log = logging.getLogger(__name__)

UNK = "<unk>"
UNKPOS = "<unkpos>"
VOCAB_FORMAT = "rnngvae-vocab 1"

_TOKEN = re.compile(r"\(|\)|[^\s()]+")


class TreebankError(ValueError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class PretrainedFormatError(ValueError):
    pass


def _tokens(text: str) -> Iterator[tuple[str, int]]:
    for lineno, line in enumerate(text.splitlines(), 1):
        for m in _TOKEN.finditer(line):
            yield m.group(0), lineno


def _sexps(text: str) -> Iterator[tuple[list, int]]:
    """Yield (nested list, start line) for every top-level bracketed record."""
    stack: list[list] = []
    start = 0
    for tok, lineno in _tokens(text):
        if tok == "(":
            if not stack:
                start = lineno
            stack.append([])
        elif tok == ")":
            if not stack:
                raise TreebankError("unexpected ')'", lineno)
            node = stack.pop()
            if stack:
                stack[-1].append(node)
            else:
                yield node, start
        else:
            if not stack:
                raise TreebankError(f"token {tok!r} outside brackets", lineno)
            stack[-1].append(tok)
    if stack:
        raise TreebankError("unbalanced brackets: record never closed", start)


def strip_function_tags(label: str) -> str:
    if label.startswith("-"):
        return label
    return re.split(r"[-=]", label, maxsplit=1)[0] or label


def _convert(node, line: int):
    """Nested list -> Tree/Leaf, dropping traces. Returns None for empty material."""
    if not node:
        return None
    if isinstance(node[0], list):
        label = ""
        kids = node
    else:
        label, kids = node[0], node[1:]
    if len(kids) == 1 and isinstance(kids[0], str):
        if label == "-NONE-":
            return None
        return Leaf(kids[0], label)
    children = []
    for kid in kids:
        if isinstance(kid, str):
            children.append(Leaf(kid))
            continue
        converted = _convert(kid, line)
        if converted is not None:
            children.append(converted)
    if not children:
        return None
    label = strip_function_tags(label) if label else label
    if len(children) == 1 and isinstance(children[0], Tree) and children[0].label == label:
        return children[0]
    return Tree(label, children)


def tree_from_string(text: str, line: int = 1) -> Tree | None:
    """Parse one bracketed tree. Outer unlabeled wrappers are removed."""
    trees = list(_iter_records(text))
    if not trees:
        return None
    if len(trees) > 1:
        raise TreebankError("more than one tree in string", line)
    return trees[0][0]


def _iter_records(text: str) -> Iterator[tuple[Tree | None, int]]:
    for sexp, line in _sexps(text):
        if (sexp and isinstance(sexp[0], str) and len(sexp) == 2 and isinstance(sexp[1], str)
                and sexp[0] != "-NONE-"):
            # a whole record "(X w)" is a one-word constituent, not a preterminal
            yield Tree(strip_function_tags(sexp[0]), [Leaf(sexp[1])]), line
            continue
        tree = _convert(sexp, line)
        while isinstance(tree, Tree) and tree.label == "" and len(tree.children) == 1 \
                and isinstance(tree.children[0], Tree):
            tree = tree.children[0]
        if isinstance(tree, Leaf):
            tree = Tree(tree.pos, [Leaf(tree.word)])
        elif (isinstance(tree, Tree) and tree.label == "" and len(tree.children) == 1
              and tree.children[0].pos is not None):
            tree = Tree(tree.children[0].pos, [Leaf(tree.children[0].word)])
        if tree is not None and tree.label == "":
            raise TreebankError("unlabeled constituent", line)
        yield tree, line


def parse_trees(text: str) -> tuple[list[Tree], int]:
    """All trees in ``text`` plus the number of empty records skipped."""
    trees, skipped = [], 0
    for tree, _ in _iter_records(text):
        if tree is None:
            skipped += 1
        else:
            trees.append(tree)
    return trees, skipped


def read_treebank(path) -> list[Tree]:
    trees, skipped = parse_trees(Path(path).read_text(encoding="utf-8"))
    if skipped:
        log.warning("%s: skipped %d empty trees", path, skipped)
    return trees


def write_treebank(path, trees: Iterable[Tree], with_pos: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in trees:
            f.write(t.to_string(with_pos) + "\n")


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------

@dataclass
class Vocab:
    words: list[str]
    nonterminals: list[str]
    pos_tags: list[str]
    counts: Counter = field(default_factory=Counter)

    def __post_init__(self):
        self.word_index = {w: i for i, w in enumerate(self.words)}
        self.nt_index = {x: i for i, x in enumerate(self.nonterminals)}
        self.pos_index = {p: i for i, p in enumerate(self.pos_tags)}

    @property
    def unk(self) -> int:
        return self.word_index[UNK]

    @property
    def n_actions(self) -> int:
        return len(self.nonterminals) + 2

    def word_id(self, w: str) -> int:
        return self.word_index.get(w, self.word_index[UNK])

    def pos_id(self, p) -> int:
        return self.pos_index.get(p, self.pos_index[UNKPOS])

    def nt_id(self, label: str) -> int:
        try:
            return self.nt_index[label]
        except KeyError:
            raise KeyError(f"nonterminal {label!r} not in vocabulary") from None

    def to_text(self) -> str:
        lines = [VOCAB_FORMAT]
        for section, items in (("words", self.words), ("nonterminals", self.nonterminals),
                               ("pos", self.pos_tags)):
            lines.append(f"{section} {len(items)}")
            lines.extend(items)
        lines.append(f"counts {len(self.counts)}")
        lines.extend(f"{w}\t{c}" for w, c in sorted(self.counts.items()))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Vocab":
        lines = text.splitlines()
        if not lines or lines[0] != VOCAB_FORMAT:
            raise ValueError(f"not a vocabulary (expected header {VOCAB_FORMAT!r})")
        pos = 1
        sections = {}
        for name in ("words", "nonterminals", "pos"):
            head, n = lines[pos].split()
            if head != name:
                raise ValueError(f"expected section {name!r}, found {head!r}")
            sections[name] = lines[pos + 1: pos + 1 + int(n)]
            pos += 1 + int(n)
        head, n = lines[pos].split()
        counts = Counter()
        for line in lines[pos + 1: pos + 1 + int(n)]:
            w, c = line.rsplit("\t", 1)
            counts[w] = int(c)
        return cls(sections["words"], sections["nonterminals"], sections["pos"], counts)


def _internal_labels(tree: Tree) -> Iterator[str]:
    yield tree.label
    for c in tree.children:
        if isinstance(c, Tree):
            yield from _internal_labels(c)


def build_vocab(trees: Sequence[Tree], min_count: int = 2) -> Vocab:
    """Words seen fewer than ``min_count`` times become <unk>; labels and tags never do."""
    if not trees:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts: Counter = Counter()
    nts, tags = set(), set()
    for t in trees:
        for leaf in t.leaves():
            counts[leaf.word] += 1
            if leaf.pos is not None:
                tags.add(leaf.pos)
        nts.update(_internal_labels(t))
    words = [UNK] + sorted(w for w, c in counts.items() if c >= min_count and w != UNK)
    return Vocab(words, sorted(nts), [UNKPOS] + sorted(tags - {UNKPOS}), counts)


# ---------------------------------------------------------------------------
# pretrained vectors
# ---------------------------------------------------------------------------

@dataclass
class PretrainedTable:
    vectors: dict[str, np.ndarray]
    dim: int

    def matrix(self, vocab: Vocab, dtype=np.float32) -> np.ndarray:
        """|W| x dim table; words without a vector get zeros."""
        out = np.zeros((len(vocab.words), self.dim), dtype=dtype)
        for w, i in vocab.word_index.items():
            v = self.vectors.get(w)
            if v is not None:
                out[i] = v
        return out


def load_pretrained(path, vocab: Vocab | None = None) -> PretrainedTable:
    """Whitespace text vectors, one word per line. Restricted to ``vocab`` if given."""
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue  # word2vec-style "count dim" header
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise PretrainedFormatError(f"line {lineno}: no vector components")
            elif len(values) != dim:
                raise PretrainedFormatError(
                    f"line {lineno}: {len(values)} components, expected {dim}")
            if vocab is not None and word not in vocab.word_index:
                continue
            try:
                vectors[word] = np.array(values, dtype=np.float64)
            except ValueError:
                raise PretrainedFormatError(f"line {lineno}: non-numeric component") from None
    if dim is None:
        raise PretrainedFormatError(f"{path}: no vectors")
    return PretrainedTable(vectors, dim)


# ---------------------------------------------------------------------------
# instances
# ---------------------------------------------------------------------------

@dataclass
class Instance:
    """One sentence in id space, with its original tokens for output."""

    words: list[int]
    tags: list[int]
    tokens: list[str]
    pos: list[str]
    gold_tree: Tree | None = None
    gold_disc: list[Action] | None = None
    gold_gen: list[Action] | None = None

    def __len__(self):
        return len(self.words)

    def leaves(self) -> list[Leaf]:
        return [Leaf(w, p) for w, p in zip(self.tokens, self.pos)]


def id_tree(tree: Tree, vocab: Vocab) -> Tree:
    return tree.map(vocab.nt_id, lambda leaf: Leaf(vocab.word_id(leaf.word), vocab.pos_id(leaf.pos)))


def make_instance(tree: Tree, vocab: Vocab) -> Instance:
    leaves = tree.leaves()
    tokens = [leaf.word for leaf in leaves]
    pos = [leaf.pos if leaf.pos is not None else UNKPOS for leaf in leaves]
    tid = id_tree(tree, vocab)
    words = [vocab.word_id(w) for w in tokens]
    return Instance(words, [vocab.pos_id(p) for p in pos], tokens, pos, tid,
                    oracle_from_tree(tid, DISC), oracle_from_tree(tid, GENERATIVE))


def sentence_instance(tokens: Sequence[str], vocab: Vocab, pos: Sequence[str] | None = None) -> Instance:
    """Instance for raw (possibly untagged) input; unknown tags fall back to <unkpos>."""
    pos = list(pos) if pos is not None else [UNKPOS] * len(tokens)
    return Instance([vocab.word_id(w) for w in tokens], [vocab.pos_id(p) for p in pos],
                    list(tokens), pos)


def instance_tree(actions: Sequence[Action], inst: Instance, vocab: Vocab) -> Tree:
    """String tree for an id-space derivation over ``inst``'s tokens."""
    disc = [Action(a.kind, vocab.nonterminals[a.arg]) if a.kind == "NT"
            else (Action("SHIFT") if a.kind == "GEN" else a) for a in actions]
    leaves = [Leaf(w, None if p == UNKPOS else p) for w, p in zip(inst.tokens, inst.pos)]
    return tree_from_actions(disc, leaves)


def read_sentences(path) -> list[tuple[list[str], list[str] | None]]:
    """Token lines or bracketed trees (auto-detected per line) -> (tokens, tags)."""
    out = []
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("("):
        for tree in parse_trees(text)[0]:
            out.append((tree.words(), [p if p is not None else UNKPOS for p in tree.tags()]))
        return out
    for line in text.splitlines():
        if line.strip():
            out.append((line.split(), None))
    return out
