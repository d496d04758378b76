"""Labeled bracketing precision / recall / F1."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .transitions import Leaf, Tree


class AlignmentError(ValueError):
    def __init__(self, index: int, message: str):
        self.index = index
        super().__init__(f"sentence {index}: {message}")


def brackets(tree: Tree) -> Counter:
    """Multiset of (label, start, end) over internal nodes, root included."""
    out: Counter = Counter()

    def walk(node, i):
        start = i
        for child in node.children:
            i = i + 1 if isinstance(child, Leaf) else walk(child, i)
        out[(node.label, start, i)] += 1
        return i

    walk(tree, 0)
    return out


@dataclass
class SentenceScore:
    matched: int
    gold: int
    pred: int


def sentence_counts(gold: Tree, pred: Tree, index: int = 0) -> SentenceScore:
    if gold.words() != pred.words():
        raise AlignmentError(index, "gold and predicted trees cover different words")
    g, p = brackets(gold), brackets(pred)
    return SentenceScore(sum((g & p).values()), sum(g.values()), sum(p.values()))


def prf(matched: int, gold: int, pred: int) -> tuple[float, float, float]:
    """Percentages; F1 is 0 when precision and recall are both 0."""
    precision = 100.0 * matched / pred if pred else 0.0
    recall = 100.0 * matched / gold if gold else 0.0
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def f1(gold_trees: Sequence[Tree], pred_trees: Sequence[Tree]) -> tuple[float, float, float]:
    """Corpus-level (precision, recall, F1) in percent."""
    if len(gold_trees) != len(pred_trees):
        raise AlignmentError(min(len(gold_trees), len(pred_trees)),
                             f"{len(gold_trees)} gold trees vs {len(pred_trees)} predicted")
    m = g = p = 0
    for i, (gt, pt) in enumerate(zip(gold_trees, pred_trees)):
        s = sentence_counts(gt, pt, i)
        m, g, p = m + s.matched, g + s.gold, p + s.pred
    return prf(m, g, p)
