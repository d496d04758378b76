"""Finite-difference cases, one per differentiable op, plus the two model losses."""
from __future__ import annotations

import numpy as np

from rnngvae import autodiff as ad
from rnngvae.training import supervised_loss
from rnngvae.treebank import make_instance, build_vocab, tree_from_string

from oracles import micro_config

# relative-error denominator floor: below this gradient magnitude the central
# difference is dominated by roundoff (about eps * |f| / h), so compare absolutely
FLOOR = 1e-5


def _p(rng, *shape, name=None):
    return ad.parameter(rng.normal(size=shape), name)


def op_cases():
    """name -> factory(rng) returning (fn, params)."""
    cases = {}

    def case(name):
        def deco(f):
            cases[name] = f
            return f
        return deco

    @case("add")
    def _(rng):
        a, b = _p(rng, 5, name="a"), _p(rng, 5, name="b")
        w = rng.normal(size=5)
        return lambda: ad.total(ad.mul(ad.add(a, b), ad.const(w))), [a, b]

    @case("sub")
    def _(rng):
        a, b = _p(rng, 5, name="a"), _p(rng, 5, name="b")
        w = rng.normal(size=5)
        return lambda: ad.total(ad.mul(ad.sub(a, b), ad.const(w))), [a, b]

    @case("mul")
    def _(rng):
        a, b = _p(rng, 6, name="a"), _p(rng, 6, name="b")
        return lambda: ad.total(ad.mul(a, b)), [a, b]

    @case("scale")
    def _(rng):
        a = _p(rng, 6, name="a")
        w = rng.normal(size=6)
        return lambda: ad.total(ad.mul(ad.scale(a, -1.7), ad.const(w))), [a]

    @case("add_n")
    def _(rng):
        xs = [_p(rng, 4, name=f"x{i}") for i in range(3)]
        w = rng.normal(size=4)
        return lambda: ad.total(ad.mul(ad.add_n(xs), ad.const(w))), xs

    @case("total")
    def _(rng):
        a = _p(rng, 3, 4, name="a")
        return lambda: ad.total(ad.tanh(a)), [a]

    @case("mean")
    def _(rng):
        xs = [_p(rng, 4, name=f"x{i}") for i in range(3)]
        w = rng.normal(size=4)
        return lambda: ad.total(ad.mul(ad.mean(xs), ad.const(w))), xs

    @case("concat")
    def _(rng):
        a, b = _p(rng, 3, name="a"), _p(rng, 4, name="b")
        w = rng.normal(size=7)
        return lambda: ad.total(ad.mul(ad.tanh(ad.concat([a, b])), ad.const(w))), [a, b]

    @case("stack_rows")
    def _(rng):
        xs = [_p(rng, 3, name=f"x{i}") for i in range(4)]
        w = rng.normal(size=(4, 3))
        return lambda: ad.total(ad.mul(ad.tanh(ad.stack_rows(xs)), ad.const(w))), xs

    @case("slice")
    def _(rng):
        a = _p(rng, 8, name="a")
        w = rng.normal(size=3)
        return lambda: ad.total(ad.mul(ad.slice_(ad.tanh(a), 2, 5), ad.const(w))), [a]

    @case("row")
    def _(rng):
        m = _p(rng, 4, 3, name="m")
        w = rng.normal(size=3)
        return lambda: ad.total(ad.mul(ad.row(ad.tanh(m), 2), ad.const(w))), [m]

    @case("tanh")
    def _(rng):
        a = _p(rng, 6, name="a")
        w = rng.normal(size=6)
        return lambda: ad.total(ad.mul(ad.tanh(a), ad.const(w))), [a]

    @case("sigmoid")
    def _(rng):
        a = _p(rng, 6, name="a")
        w = rng.normal(size=6)
        return lambda: ad.total(ad.mul(ad.sigmoid(a), ad.const(w))), [a]

    @case("linear")
    def _(rng):
        W, x, b = _p(rng, 4, 5, name="W"), _p(rng, 5, name="x"), _p(rng, 4, name="b")
        w = rng.normal(size=4)
        return lambda: ad.total(ad.mul(ad.tanh(ad.linear(W, x, b)), ad.const(w))), [W, x, b]

    @case("linear_nobias")
    def _(rng):
        W, x = _p(rng, 4, 5, name="W"), _p(rng, 5, name="x")
        w = rng.normal(size=4)
        return lambda: ad.total(ad.mul(ad.tanh(ad.linear(W, x)), ad.const(w))), [W, x]

    @case("project_rows")
    def _(rng):
        M, W = _p(rng, 3, 5, name="M"), _p(rng, 4, 5, name="W")
        w = rng.normal(size=(3, 4))
        return lambda: ad.total(ad.mul(ad.tanh(ad.project_rows(M, W)), ad.const(w))), [M, W]

    @case("lookup")
    def _(rng):
        E = _p(rng, 5, 3, name="E")
        w = rng.normal(size=3)
        return (lambda: ad.total(ad.mul(ad.tanh(ad.add(ad.lookup(E, 1), ad.lookup(E, 3))),
                                        ad.const(w))), [E])

    @case("lookup_repeated")
    def _(rng):
        E = _p(rng, 4, 3, name="E")
        w = rng.normal(size=3)
        return (lambda: ad.total(ad.mul(ad.tanh(ad.mul(ad.lookup(E, 2), ad.lookup(E, 2))),
                                        ad.const(w))), [E])

    @case("dropout")
    def _(rng):
        a = _p(rng, 20, name="a")
        w = rng.normal(size=20)
        # same mask on every evaluation
        return (lambda: ad.total(ad.mul(ad.dropout(ad.tanh(a), 0.3, np.random.default_rng(5)),
                                        ad.const(w))), [a])

    @case("log_softmax")
    def _(rng):
        a = _p(rng, 6, name="a")
        w = rng.normal(size=6)
        mask = np.array([1, 1, 1, 1, 0, 0], dtype=bool)
        # masked entries are -inf; only the finite prefix enters the loss
        return (lambda: ad.total(ad.mul(ad.slice_(ad.log_softmax(a, mask), 0, 4),
                                        ad.const(w[:4]))), [a])

    @case("softmax")
    def _(rng):
        a = _p(rng, 6, name="a")
        w = rng.normal(size=6)
        return lambda: ad.total(ad.mul(ad.softmax(a), ad.const(w))), [a]

    @case("log_softmax_pick")
    def _(rng):
        a = _p(rng, 7, name="a")
        mask = np.array([1, 0, 1, 1, 1, 0, 1], dtype=bool)
        return lambda: ad.add(ad.log_softmax_pick(a, 3, mask), ad.log_softmax_pick(a, 0)), [a]

    @case("lstm_cell")
    def _(rng):
        H, D = 3, 4
        x, s = _p(rng, D, name="x"), _p(rng, 2 * H, name="state")
        W, b = ad.parameter(0.5 * rng.normal(size=(4 * H, D + H)), "W"), _p(rng, 4 * H, name="b")
        w = rng.normal(size=2 * H)
        return (lambda: ad.total(ad.mul(ad.lstm_cell(x, ad.lstm_cell(x, s, W, b), W, b),
                                        ad.const(w))), [x, s, W, b])

    @case("attention")
    def _(rng):
        n, k, q, a = 5, 3, 4, 6
        query, keys = _p(rng, q, name="query"), _p(rng, n, k, name="keys")
        Wk, Wq, v = _p(rng, a, k, name="Wk"), _p(rng, a, q, name="Wq"), _p(rng, a, name="v")
        w = rng.normal(size=k)

        def fn():
            kp = ad.project_rows(keys, Wk)
            return ad.total(ad.mul(ad.attention(query, kp, keys, Wq, v, start=1), ad.const(w)))

        return fn, [query, keys, Wk, Wq, v]

    return cases


def _model_and_instance():
    from rnngvae.model import RNNGVAE
    tree = tree_from_string("(S (NP (DT the) (NN dog)) (VP (VBZ barks) (PP (IN at) (NP (NN night)))))")
    vocab = build_vocab([tree], min_count=1)
    cfg = micro_config(learned_dim=4, pos_dim=3, enc_lstm_dim=5, dec_lstm_dim=5, lstm_layers=2,
                       nt_dim=3, max_open_nt=10, max_len=20)
    model = RNNGVAE(cfg, vocab, np.random.default_rng(2).normal(size=(len(vocab.words), 2)))
    return model, make_instance(tree, vocab)


def supervised_case():
    """La = log q(a*|x) + log p(a*) over every model parameter."""
    model, inst = _model_and_instance()
    return (lambda: supervised_loss(model, inst)), list(model.params)


def elbo_case():
    """The score-function surrogate log p(x,a) + c log q(a|x) at a fixed sampled a and weight c."""
    model, inst = _model_and_instance()
    with ad.no_grad():
        actions, logq = model.encoder.sample_actions(inst.words, inst.tags, np.random.default_rng(9))
        joint = model.decoder.score_joint(inst.words, actions).log_joint
    c = float(joint.value) - float(logq.value) - 0.3

    def fn():
        lq = model.encoder.score_actions(inst.words, inst.tags, actions)
        lj = model.decoder.score_joint(inst.words, actions).log_joint
        return ad.add(lj, ad.scale(lq, c))

    return fn, list(model.params)


def check(fn, params, n_coords=20, seed=0):
    """-> list of (name, index, analytic, numeric, relative error)."""
    rows = ad.gradcheck(fn, params, n_coords=n_coords, h=1e-4, rng=np.random.default_rng(seed))
    return [(n, i, a, b, ad.relative_error(a, b, FLOOR)) for n, i, a, b in rows]
