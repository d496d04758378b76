"""A small probabilistic grammar for desk-scale experiments and fixtures."""
from __future__ import annotations

import numpy as np

from .transitions import Leaf, Tree

# nonterminal -> list of (probability, right-hand side); lowercase symbols are POS tags
GRAMMAR = {
    "S": [(0.75, ["NP", "VP"]), (0.25, ["NP", "VP", "PP"])],
    "NP": [(0.45, ["DT", "NN"]), (0.2, ["DT", "JJ", "NN"]), (0.15, ["NNP"]),
           (0.2, ["NP", "PP"])],
    "VP": [(0.35, ["VBD", "NP"]), (0.25, ["VBZ"]), (0.25, ["VBD", "NP", "PP"]),
           (0.15, ["VBZ", "SBAR"])],
    "PP": [(1.0, ["IN", "NP"])],
    "SBAR": [(1.0, ["IN_C", "S"])],
}

LEXICON = {
    "DT": ["the", "a", "every", "some", "this"],
    "NN": ["cat", "dog", "park", "telescope", "man", "garden", "house", "bird", "table", "river"],
    "JJ": ["big", "small", "old", "red", "quiet"],
    "NNP": ["John", "Mary", "Paris", "Alice"],
    "VBD": ["saw", "liked", "found", "chased", "painted"],
    "VBZ": ["sleeps", "runs", "thinks", "knows"],
    "IN": ["in", "with", "near", "under"],
    "IN_C": ["that"],
}

POS_NAME = {"IN_C": "IN"}


def sample_tree(rng: np.random.Generator, symbol: str = "S", depth: int = 0,
                max_depth: int = 6) -> Tree:
    rules = GRAMMAR[symbol]
    probs = np.array([p for p, _ in rules])
    if depth >= max_depth:
        # fall back to the rule with the fewest nonterminals to terminate
        choice = min(range(len(rules)), key=lambda k: sum(s in GRAMMAR for s in rules[k][1]))
    else:
        choice = int(rng.choice(len(rules), p=probs / probs.sum()))
    children = []
    for sym in rules[choice][1]:
        if sym in GRAMMAR:
            children.append(sample_tree(rng, sym, depth + 1, max_depth))
        else:
            words = LEXICON[sym]
            children.append(Leaf(words[int(rng.integers(len(words)))], POS_NAME.get(sym, sym)))
    return Tree(symbol, children)


def sample_treebank(n: int, seed: int = 0, max_words: int = 20, max_depth: int = 6) -> list[Tree]:
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        t = sample_tree(rng, max_depth=max_depth)
        if len(t.leaves()) <= max_words:
            out.append(t)
    return out
