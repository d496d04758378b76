import numpy as np
import pytest

from rnngvae import transitions as tr
from rnngvae.transitions import Leaf, Tree
from rnngvae.treebank import (UNK, UNKPOS, PretrainedFormatError, TreebankError, Vocab, build_vocab,
                              instance_tree, load_pretrained, make_instance, parse_trees,
                              read_sentences, read_treebank, sentence_instance, strip_function_tags,
                              tree_from_string, write_treebank)


def test_ptb_sample_cleanup(data_dir):
    trees = read_treebank(data_dir / "ptb_sample.mrg")
    assert len(trees) == 4
    first = trees[0]
    assert first.label == "S"
    # -NONE- leaves and the constituents left empty by them are gone
    assert "0" not in first.words() and "*-1" not in first.words()
    assert first.words()[:3] == ["The", "company", "said"]
    labels = set()

    def walk(t):
        labels.add(t.label)
        for c in t.children:
            if isinstance(c, Tree):
                walk(c)

    walk(first)
    assert "NP" in labels and not any("-" in lab for lab in labels)
    # the outer TOP label is a real label and is kept
    assert trees[3].label == "TOP"


@pytest.mark.parametrize("label, expected", [
    ("NP-SBJ", "NP"), ("NP-SBJ-1", "NP"), ("ADVP-TMP", "ADVP"), ("NP=2", "NP"), ("-LRB-", "-LRB-"),
    ("S", "S"),
])
def test_strip_function_tags(label, expected):
    assert strip_function_tags(label) == expected


def test_unary_chain_of_same_label_collapses():
    t = tree_from_string("(NP (NP (DT the) (NN dog)))")
    assert t.to_string() == "(NP (DT the) (NN dog))"


def test_one_word_records():
    assert tree_from_string("(X w)") == Tree("X", [Leaf("w")])
    assert tree_from_string("((X w))") == Tree("X", [Leaf("w")])


def test_bare_words_under_constituents():
    t = tree_from_string("(S (NP the dog) barks)")
    assert t.to_string() == "(S (NP the dog) barks)"
    assert t.tags() == [None, None, None]


def test_errors_carry_line_numbers():
    with pytest.raises(TreebankError) as e:
        parse_trees("(S (NP a))\n(S (NP b)\n")
    assert e.value.line == 2
    with pytest.raises(TreebankError) as e:
        parse_trees("(S a))")
    assert e.value.line == 1
    with pytest.raises(TreebankError):
        parse_trees("word (S a)")


def test_trace_only_tree_is_skipped():
    trees, skipped = parse_trees("(S (-NONE- *))\n(S (NN a))")
    assert len(trees) == 1 and skipped == 1


def test_write_read_roundtrip(tmp_path, data_dir):
    trees = read_treebank(data_dir / "ptb_sample.mrg")
    write_treebank(tmp_path / "out.mrg", trees)
    assert read_treebank(tmp_path / "out.mrg") == trees


def test_vocab_threshold_and_ids():
    trees = [tree_from_string("(S (NN a) (NN b))"), tree_from_string("(S (NN a) (VB c))")]
    v = build_vocab(trees, min_count=2)
    assert v.words == [UNK, "a"]
    assert v.unk == 0
    assert v.word_id("b") == v.word_id("zzz") == 0
    assert v.nonterminals == ["S"]
    assert v.pos_tags == [UNKPOS, "NN", "VB"]
    assert v.pos_id("JJ") == 0
    assert v.n_actions == 3
    with pytest.raises(KeyError):
        v.nt_id("VP")
    assert Vocab.from_text(v.to_text()) == v


def test_vocab_text_rejects_garbage():
    with pytest.raises(ValueError):
        Vocab.from_text("hello\n")


def test_instances_and_back(data_dir):
    trees = read_treebank(data_dir / "ptb_sample.mrg")
    v = build_vocab(trees, min_count=1)
    for t in trees:
        inst = make_instance(t, v)
        assert len(inst) == len(t.leaves())
        assert inst.gold_disc == tr.to_discriminative(inst.gold_gen)
        assert instance_tree(inst.gold_gen, inst, v) == t


def test_sentence_instance_unknowns():
    v = Vocab([UNK, "a"], ["S"], [UNKPOS, "NN"])
    inst = sentence_instance(["a", "zz"], v, ["NN", "QQ"])
    assert inst.words == [1, 0] and inst.tags == [1, 0]
    assert sentence_instance(["a"], v).tags == [0]


def test_read_sentences_both_formats(data_dir):
    plain = read_sentences(data_dir / "sentences.txt")
    assert plain[0] == ("the dog saw a cat".split(), None)
    trees = read_sentences(data_dir / "ptb_sample.mrg")
    assert trees[1] == (["John", "runs", "."], ["NNP", "VBZ", "."])


def test_pretrained_loading(data_dir):
    v = Vocab([UNK, "the", "dog", "fish"], ["S"], [UNKPOS])
    table = load_pretrained(data_dir / "vectors.txt", v)
    assert table.dim == 2 and set(table.vectors) == {"the", "dog"}
    m = table.matrix(v, np.float64)
    assert m.shape == (4, 2)
    np.testing.assert_allclose(m[2], [0.3, -0.4])
    assert not m[3].any()


@pytest.mark.parametrize("text", ["a 1 2\nb 3\n", "a x y\n", "", "a\n"])
def test_pretrained_format_errors(tmp_path, text):
    p = tmp_path / "v.txt"
    p.write_text(text)
    with pytest.raises(PretrainedFormatError):
        load_pretrained(p)
