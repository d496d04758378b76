"""Top-down transition systems for constituency trees.

Two variants share one state type:

* discriminative: NT(X), SHIFT, REDUCE over an input buffer of words;
* generative: NT(X), GEN(w), REDUCE, where generated words go to an output
  buffer.

Labels and words are opaque hashables, so the same code runs on strings
(file I/O) and on integer ids (the neural models).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

NT = "NT"
SHIFT = "SHIFT"
GEN = "GEN"
REDUCE = "REDUCE"

DISC = "discriminative"
GENERATIVE = "generative"

# Dense action ids used by the models: the terminal action (SHIFT or GEN,
# whose word is scored separately) and REDUCE come first, then one id per
# nonterminal. Argmax ties therefore prefer SHIFT, then REDUCE, then NTs in
# inventory order.
TERMINAL_ID = 0
REDUCE_ID = 1
NT_OFFSET = 2


class TransitionError(ValueError):
    pass


class AlreadyFinal(TransitionError):
    def __init__(self):
        super().__init__("already-final: the state is terminal")


class IllegalTransition(TransitionError):
    def __init__(self, action, state):
        self.action = action
        self.state = state
        super().__init__(f"illegal-transition: {action} in state {state.describe()}")


class MalformedDerivation(TransitionError):
    def __init__(self, step: int, reason: str):
        self.step = step
        super().__init__(f"malformed-derivation at step {step}: {reason}")


@dataclass(frozen=True, slots=True)
class Action:
    kind: str
    arg: Hashable = None

    def __str__(self):
        if self.kind in (NT, GEN):
            return f"{self.kind}({self.arg})"
        return self.kind

    @classmethod
    def parse(cls, token: str) -> "Action":
        if token in (SHIFT, REDUCE):
            return cls(token)
        for kind in (NT, GEN):
            if token.startswith(kind + "(") and token.endswith(")") and len(token) > len(kind) + 2:
                return cls(kind, token[len(kind) + 1: -1])
        raise ValueError(f"not an action token: {token!r}")


@dataclass(frozen=True, slots=True)
class Leaf:
    word: Hashable
    pos: Hashable = None


@dataclass(slots=True)
class Tree:
    label: Hashable
    children: list = field(default_factory=list)

    def leaves(self) -> list[Leaf]:
        out = []
        stack = [self]
        while stack:
            node = stack.pop()
            if isinstance(node, Leaf):
                out.append(node)
            else:
                stack.extend(reversed(node.children))
        return out

    def words(self) -> list:
        return [leaf.word for leaf in self.leaves()]

    def tags(self) -> list:
        return [leaf.pos for leaf in self.leaves()]

    def n_internal(self) -> int:
        return 1 + sum(c.n_internal() for c in self.children if isinstance(c, Tree))

    def to_string(self, with_pos: bool = True) -> str:
        parts = []
        for child in self.children:
            if isinstance(child, Tree):
                parts.append(child.to_string(with_pos))
            elif with_pos and child.pos is not None:
                parts.append(f"({child.pos} {child.word})")
            else:
                parts.append(str(child.word))
        return f"({self.label} {' '.join(parts)})"

    def map(self, label_fn, leaf_fn) -> "Tree":
        return Tree(label_fn(self.label),
                    [c.map(label_fn, leaf_fn) if isinstance(c, Tree) else leaf_fn(c)
                     for c in self.children])

    def __str__(self):
        return self.to_string()


@dataclass(frozen=True, slots=True)
class OpenNT:
    label: Hashable


@dataclass(frozen=True, slots=True)
class Constraints:
    max_open_nt: int = 100
    max_len: int = 120


DEFAULT_LIMITS = Constraints()


@dataclass(frozen=True, slots=True)
class ParserState:
    """Stack, buffer and open-constituent bookkeeping.

    ``buffer`` is the remaining input (discriminative) or the words generated
    so far (generative). ``opens`` holds the stack positions of open markers,
    innermost last.
    """

    mode: str
    stack: tuple = ()
    buffer: tuple = ()
    opens: tuple = ()
    step: int = 0

    @property
    def open_nt(self) -> int:
        return len(self.opens)

    @property
    def parent_nt(self):
        return self.stack[self.opens[-1]].label if self.opens else None

    def is_terminal(self) -> bool:
        return (len(self.stack) == 1 and isinstance(self.stack[0], Tree) and not self.opens
                and (self.mode == GENERATIVE or not self.buffer))

    def describe(self) -> str:
        def item(x):
            if isinstance(x, OpenNT):
                return f"({x.label}"
            if isinstance(x, Leaf):
                return str(x.word)
            return x.to_string(with_pos=False)

        return (f"[{self.mode} step={self.step} stack={[item(x) for x in self.stack]} "
                f"buffer={[b.word for b in self.buffer]} open={self.open_nt}]")


def initial_state(mode: str, words: Sequence = ()) -> ParserState:
    if mode == DISC:
        return ParserState(DISC, buffer=tuple(w if isinstance(w, Leaf) else Leaf(w) for w in words))
    if mode == GENERATIVE:
        return ParserState(GENERATIVE)
    raise ValueError(f"unknown mode {mode!r}")


def allowed_kinds(state: ParserState, limits: Constraints = DEFAULT_LIMITS) -> tuple[bool, bool, bool]:
    """(NT allowed, SHIFT/GEN allowed, REDUCE allowed) for a non-terminal state."""
    if state.is_terminal():
        raise AlreadyFinal()
    n_open = len(state.opens)
    if state.mode == DISC:
        room = len(state.buffer) > 0
    else:
        room = len(state.buffer) < limits.max_len
    nt_ok = room and n_open < limits.max_open_nt and not (n_open == 0 and state.stack)
    term_ok = room and n_open > 0
    reduce_ok = (n_open > 0 and not isinstance(state.stack[-1], OpenNT)
                 and not (state.mode == DISC and n_open == 1 and state.buffer))
    return nt_ok, term_ok, reduce_ok


def legal_mask(state: ParserState, n_nonterminals: int,
               limits: Constraints = DEFAULT_LIMITS) -> np.ndarray:
    """Boolean mask over dense action ids (see ``TERMINAL_ID`` etc.)."""
    nt_ok, term_ok, reduce_ok = allowed_kinds(state, limits)
    mask = np.empty(NT_OFFSET + n_nonterminals, dtype=np.bool_)
    mask[TERMINAL_ID] = term_ok
    mask[REDUCE_ID] = reduce_ok
    mask[NT_OFFSET:] = nt_ok
    return mask


def legal_actions(state: ParserState, nonterminals: Iterable,
                  limits: Constraints = DEFAULT_LIMITS) -> list[Action]:
    """Legal actions; GEN is returned once with no word (the word is chosen separately)."""
    nt_ok, term_ok, reduce_ok = allowed_kinds(state, limits)
    out = []
    if term_ok:
        out.append(Action(SHIFT) if state.mode == DISC else Action(GEN))
    if reduce_ok:
        out.append(Action(REDUCE))
    if nt_ok:
        out.extend(Action(NT, x) for x in nonterminals)
    return out


def is_legal(state: ParserState, action: Action, limits: Constraints = DEFAULT_LIMITS) -> bool:
    nt_ok, term_ok, reduce_ok = allowed_kinds(state, limits)
    if action.kind == NT:
        return nt_ok
    if action.kind == REDUCE:
        return reduce_ok
    if action.kind == SHIFT:
        return term_ok and state.mode == DISC
    if action.kind == GEN:
        return term_ok and state.mode == GENERATIVE
    return False


def apply_action(state: ParserState, action: Action,
                 limits: Constraints = DEFAULT_LIMITS) -> ParserState:
    if not is_legal(state, action, limits):
        raise IllegalTransition(action, state)
    stack, buffer, opens = state.stack, state.buffer, state.opens
    kind = action.kind
    if kind == NT:
        return ParserState(state.mode, stack + (OpenNT(action.arg),), buffer,
                           opens + (len(stack),), state.step + 1)
    if kind == SHIFT:
        return ParserState(state.mode, stack + (buffer[0],), buffer[1:], opens, state.step + 1)
    if kind == GEN:
        leaf = action.arg if isinstance(action.arg, Leaf) else Leaf(action.arg)
        return ParserState(state.mode, stack + (leaf,), buffer + (leaf,), opens, state.step + 1)
    start = opens[-1]
    subtree = Tree(stack[start].label, list(stack[start + 1:]))
    return ParserState(state.mode, stack[:start] + (subtree,), buffer, opens[:-1], state.step + 1)


def oracle_from_tree(tree: Tree, mode: str) -> list[Action]:
    """Top-down, left-to-right derivation of ``tree``."""
    out: list[Action] = []

    def visit(node):
        if isinstance(node, Leaf):
            out.append(Action(SHIFT) if mode == DISC else Action(GEN, node.word))
            return
        out.append(Action(NT, node.label))
        for child in node.children:
            visit(child)
        out.append(Action(REDUCE))

    if mode not in (DISC, GENERATIVE):
        raise ValueError(f"unknown mode {mode!r}")
    visit(tree)
    return out


def tree_from_actions(actions: Sequence[Action], words: Sequence | None = None,
                      limits: Constraints = DEFAULT_LIMITS) -> Tree:
    """Replay a derivation. ``words`` (plain words or ``Leaf``) supply the leaves.

    For generative sequences ``words`` is optional; when given, each word
    must equal the corresponding GEN argument and its POS is kept.
    """
    generative = any(a.kind == GEN for a in actions)
    words = list(words) if words is not None else None
    n_term = sum(a.kind in (SHIFT, GEN) for a in actions)
    if words is not None and len(words) != n_term:
        raise MalformedDerivation(0, f"{len(words)} words for {n_term} terminal actions")
    if generative:
        state = initial_state(GENERATIVE)
        limits = Constraints(limits.max_open_nt, max(limits.max_len, n_term))
    else:
        if words is None:
            raise MalformedDerivation(0, "discriminative derivation needs words")
        state = initial_state(DISC, words)
    k = 0
    for step, action in enumerate(actions):
        if generative and action.kind == GEN and words is not None:
            w = words[k]
            leaf = w if isinstance(w, Leaf) else Leaf(w)
            if leaf.word != action.arg:
                raise MalformedDerivation(step, f"GEN({action.arg}) but word is {leaf.word!r}")
            action = Action(GEN, leaf)
        if action.kind in (SHIFT, GEN):
            k += 1
        try:
            state = apply_action(state, action, limits)
        except AlreadyFinal:
            raise MalformedDerivation(step, "actions after the derivation finished") from None
        except IllegalTransition:
            raise MalformedDerivation(step, f"{action} is illegal here") from None
    if not state.is_terminal():
        raise MalformedDerivation(len(actions), "derivation is incomplete")
    return state.stack[0]


def action_counts(actions: Sequence[Action]) -> dict[str, int]:
    counts = {NT: 0, SHIFT: 0, GEN: 0, REDUCE: 0}
    for a in actions:
        counts[a.kind] += 1
    return counts


def to_generative(actions: Sequence[Action], words: Sequence) -> list[Action]:
    """SHIFT -> GEN(word) using ``words`` in order."""
    it = iter(words)
    return [Action(GEN, next(it)) if a.kind == SHIFT else a for a in actions]


def to_discriminative(actions: Sequence[Action]) -> list[Action]:
    return [Action(SHIFT) if a.kind == GEN else a for a in actions]


def format_actions(actions: Sequence[Action]) -> str:
    return " ".join(str(a) for a in actions)


def parse_actions(line: str) -> list[Action]:
    return [Action.parse(tok) for tok in line.split()]


def action_id(action: Action, nt_index=None) -> int:
    """Dense id; ``nt_index`` maps NT labels to 0-based ids (identity if None)."""
    if action.kind in (SHIFT, GEN):
        return TERMINAL_ID
    if action.kind == REDUCE:
        return REDUCE_ID
    label = action.arg if nt_index is None else nt_index[action.arg]
    return NT_OFFSET + int(label)


def action_from_id(idx: int, mode: str, word=None) -> Action:
    if idx == TERMINAL_ID:
        return Action(SHIFT) if mode == DISC else Action(GEN, word)
    if idx == REDUCE_ID:
        return Action(REDUCE)
    return Action(NT, idx - NT_OFFSET)


def n_action_types(n_nonterminals: int) -> int:
    return n_nonterminals + 2
