import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rnngvae import transitions as tr
from rnngvae.transitions import Action, Constraints, Leaf, Tree

from oracles import disc_derivations, gen_skeletons


def trees(max_leaves=8):
    leaf = st.builds(Leaf, st.sampled_from(["a", "b", "c", "the"]), st.sampled_from(["DT", "NN", None]))
    return st.recursive(
        st.builds(lambda lab, kids: Tree(lab, kids), st.sampled_from(["S", "NP", "VP"]),
                  st.lists(leaf, min_size=1, max_size=3)),
        lambda sub: st.builds(lambda lab, kids: Tree(lab, kids), st.sampled_from(["S", "NP", "VP", "PP"]),
                              st.lists(st.one_of(sub, leaf), min_size=1, max_size=3)),
        max_leaves=max_leaves)


@settings(max_examples=200, deadline=None)
@given(trees())
def test_oracle_replay_roundtrip_both_modes(tree):
    for mode in (tr.DISC, tr.GENERATIVE):
        actions = tr.oracle_from_tree(tree, mode)
        assert tr.tree_from_actions(actions, tree.leaves()) == tree
    gen = tr.oracle_from_tree(tree, tr.GENERATIVE)
    assert tr.to_discriminative(gen) == tr.oracle_from_tree(tree, tr.DISC)
    assert tr.to_generative(tr.oracle_from_tree(tree, tr.DISC), tree.words()) == gen
    assert tr.parse_actions(tr.format_actions(gen)) == gen


@settings(max_examples=100, deadline=None)
@given(trees())
def test_oracle_actions_are_legal_at_every_step(tree):
    actions = tr.oracle_from_tree(tree, tr.DISC)
    state = tr.initial_state(tr.DISC, tree.leaves())
    for a in actions:
        assert tr.is_legal(state, a)
        state = tr.apply_action(state, a)
    assert state.is_terminal()
    c = tr.action_counts(actions)
    assert c["NT"] == c["REDUCE"] == tree.n_internal()
    assert c["SHIFT"] == len(tree.leaves())


def test_action_string_forms():
    assert str(Action(tr.NT, "NP")) == "NT(NP)"
    assert str(Action(tr.GEN, "dog")) == "GEN(dog)"
    assert str(Action(tr.SHIFT)) == "SHIFT"
    assert Action.parse("NT(S)") == Action(tr.NT, "S")
    assert Action.parse("REDUCE") == Action(tr.REDUCE)


def test_action_ids():
    assert tr.action_id(Action(tr.SHIFT)) == tr.TERMINAL_ID == 0
    assert tr.action_id(Action(tr.GEN, 5)) == 0
    assert tr.action_id(Action(tr.REDUCE)) == 1
    assert tr.action_id(Action(tr.NT, 3)) == 5
    assert tr.action_id(Action(tr.NT, "VP"), {"S": 0, "VP": 1}) == 3
    assert tr.n_action_types(4) == 6
    assert tr.action_from_id(4, tr.DISC) == Action(tr.NT, 2)
    assert tr.action_from_id(0, tr.GENERATIVE, 7) == Action(tr.GEN, 7)


def test_initial_legality():
    s = tr.initial_state(tr.DISC, ["a", "b"])
    nt_ok, term_ok, red_ok = tr.allowed_kinds(s)
    assert nt_ok and not term_ok and not red_ok
    assert tr.legal_mask(s, 2).tolist() == [False, False, True, True]
    g = tr.initial_state(tr.GENERATIVE)
    assert tr.legal_actions(g, ["S"]) == [Action(tr.NT, "S")]


def test_reduce_needs_non_marker_top_and_disc_needs_empty_buffer_at_root():
    s = tr.apply_action(tr.initial_state(tr.DISC, ["a", "b"]), Action(tr.NT, "S"))
    assert not tr.is_legal(s, Action(tr.REDUCE))
    s = tr.apply_action(s, Action(tr.SHIFT))
    # closing the only open constituent with input remaining would strand it
    assert not tr.is_legal(s, Action(tr.REDUCE))
    s = tr.apply_action(s, Action(tr.SHIFT))
    assert tr.is_legal(s, Action(tr.REDUCE))
    assert tr.apply_action(s, Action(tr.REDUCE)).is_terminal()


def test_no_second_root():
    s = tr.initial_state(tr.GENERATIVE)
    for a in [Action(tr.NT, "S"), Action(tr.GEN, "w"), Action(tr.REDUCE)]:
        s = tr.apply_action(s, a)
    assert s.is_terminal()
    with pytest.raises(tr.AlreadyFinal):
        tr.allowed_kinds(s)


def test_limits_block_nt_and_generation():
    lim = Constraints(max_open_nt=1, max_len=1)
    s = tr.apply_action(tr.initial_state(tr.GENERATIVE), Action(tr.NT, "S"), lim)
    assert not tr.is_legal(s, Action(tr.NT, "S"), lim)
    s = tr.apply_action(s, Action(tr.GEN, "x"), lim)
    assert not tr.is_legal(s, Action(tr.GEN, "y"), lim)
    assert tr.legal_actions(s, ["S"], lim) == [Action(tr.REDUCE)]


def test_illegal_transition_reports_state():
    s = tr.initial_state(tr.DISC, ["a"])
    with pytest.raises(tr.IllegalTransition) as e:
        tr.apply_action(s, Action(tr.SHIFT))
    assert "SHIFT" in str(e.value)


@pytest.mark.parametrize("bad, step", [
    ("NT(S) SHIFT", 2),
    ("SHIFT", 0),
    ("NT(S) SHIFT REDUCE REDUCE", 3),
    ("NT(S) REDUCE SHIFT", 1),
])
def test_malformed_derivation_points_at_step(bad, step):
    with pytest.raises(tr.MalformedDerivation) as e:
        tr.tree_from_actions(tr.parse_actions(bad), ["a"])
    assert e.value.step == step


def test_word_count_mismatch():
    with pytest.raises(tr.MalformedDerivation):
        tr.tree_from_actions(tr.parse_actions("NT(S) SHIFT REDUCE"), ["a", "b"])
    with pytest.raises(tr.MalformedDerivation):
        tr.tree_from_actions(tr.parse_actions("NT(S) GEN(a) REDUCE"), ["b"])


def test_generative_replay_without_words():
    t = tr.tree_from_actions(tr.parse_actions("NT(S) NT(NP) GEN(a) REDUCE GEN(b) REDUCE"))
    assert t.to_string(with_pos=False) == "(S (NP a) b)"


def _enumerate_with_package(mode, n_words, n_nt, lim):
    out = []

    def walk(state, prefix):
        if state.is_terminal():
            out.append(prefix)
            return
        for a in tr.legal_actions(state, range(n_nt), lim):
            if a.kind == tr.GEN:
                a = Action(tr.GEN, "w")
            walk(tr.apply_action(state, a, lim), prefix + [a])

    walk(tr.initial_state(mode, ["w"] * n_words), [])
    return out


@pytest.mark.parametrize("n_words, max_open", [(1, 1), (2, 2), (3, 2), (2, 3)])
def test_legal_action_space_matches_independent_enumeration(n_words, max_open):
    lim = Constraints(max_open_nt=max_open)
    ours = _enumerate_with_package(tr.DISC, n_words, 2, lim)
    ref = disc_derivations(n_words, 2, max_open)
    key = lambda seq: tr.format_actions(seq)
    assert sorted(map(key, ours)) == sorted(map(key, ref))


def test_generative_space_matches_independent_enumeration():
    lim = Constraints(max_open_nt=2, max_len=2)
    ours = _enumerate_with_package(tr.GENERATIVE, 0, 2, lim)
    ref = [[Action(tr.GEN, "w") if a.kind == tr.GEN else a for a in s] for s in gen_skeletons(2, 2, 2)]
    assert sorted(map(tr.format_actions, ours)) == sorted(map(tr.format_actions, ref))


def test_tree_rendering():
    t = Tree("S", [Tree("NP", [Leaf("the", "DT"), Leaf("dog", "NN")]), Leaf("ran")])
    assert t.to_string() == "(S (NP (DT the) (NN dog)) ran)"
    assert t.to_string(with_pos=False) == "(S (NP the dog) ran)"
    assert t.words() == ["the", "dog", "ran"]
    assert t.n_internal() == 2


def test_legal_mask_dtype_and_shape():
    s = tr.initial_state(tr.DISC, ["a"])
    m = tr.legal_mask(s, 3)
    assert m.dtype == np.bool_ and m.shape == (5,)
