import math

import numpy as np
import pytest
import scipy.sparse as sp

from flagforge import nn_core as nn
from flagforge.errors import EmptyGraph, ShapeMismatch
from flagforge.flag import Flag, build_pool_map
from flagforge.model import (
    ModelConfig,
    cg_pool,
    classifier_logits,
    embed_nodes,
    forward_logits,
    full_forward,
    gat_forward,
    init_params,
    make_batch,
    param_shapes,
    readout,
    sage_forward,
)
from flagforge.nn_core import Tensor

TOY = dict(embed_dim=4, sage_dims=(3, 3, 3), gat_dims=(4, 3, 3), gat_heads=(2, 1, 1), clf_dims=(3, 3))


def P(data):
    return Tensor(np.asarray(data, dtype=float), requires_grad=True)


def toy_flag(seed=0, n=6, n_groups=3):
    """Hand-shaped FLAG: a function (group 0) plus helper declarations."""
    rng = np.random.default_rng(seed)
    decls = [100] * (n - 2 * (n_groups - 1)) + [200 + g for g in range(1, n_groups) for _ in range(2)]
    types = ["FunctionDefinition"] + ["Identifier"] * (len(decls) - 1)
    ids = list(range(100, 100 + n))
    ids[0] = 100
    for g in range(1, n_groups):
        pos = decls.index(200 + g)
        ids[pos] = 200 + g
        types[pos] = "VariableDeclaration"
    edges = set()
    for v in range(1, n):
        u = int(rng.integers(0, v))
        edges.add((u, v, "Child"))
        edges.add((v, u, "Parent"))
    for _ in range(n):
        edges.add((int(rng.integers(0, n)), int(rng.integers(0, n)), "ReferencedDeclaration"))
    f = Flag(
        target_function=100, coverage=2, node_ids=ids, node_types=types,
        texts=[f"t{i}" for i in range(n)], node_decls=decls, edges=sorted(edges),
    )
    return build_pool_map(f)


def toy_tokens(f, vocab, seed=0):
    rng = np.random.default_rng(seed + 17)
    return [[int(t) for t in rng.integers(2, vocab, size=rng.integers(1, 4))] for _ in range(f.num_nodes)]


# ------------------------------------------------------------- shape audit


def test_default_architecture_shapes():
    C, V = 4, 4096
    shapes = param_shapes(ModelConfig(vocab_size=V, num_classes=C))
    expected = {
        "embedding": (V, 512),
        "sage1.weight": (512 + 512, 1024), "sage1.bias": (1024,),
        "sage2.weight": (1024 + 1024, 1024), "sage2.bias": (1024,),
        "sage3.weight": (1024 + 1024, 1024), "sage3.bias": (1024,),
        "clf1.weight": (1024, 1024), "clf1.bias": (1024,),
        "clf2.weight": (1024, 1024), "clf2.bias": (1024,),
        "clf3.weight": (1024, C), "clf3.bias": (C,),
    }
    for h in range(4):
        expected[f"gat1.head{h}.weight"] = (1024, 256)
        expected[f"gat1.head{h}.att"] = (512, 1)
    for k in (2, 3):
        expected[f"gat{k}.head0.weight"] = (1024, 1024)
        expected[f"gat{k}.head0.att"] = (2048, 1)
    assert shapes == expected


def test_gat_heads_must_divide_width():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, gat_dims=(10, 3, 3), gat_heads=(4, 1, 1))


def test_sage_width_mismatch():
    H = Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeMismatch):
        sage_forward(H, sp.csr_matrix((2, 2)), Tensor(np.ones((5, 2))), Tensor(np.zeros(2)), True)


# ---------------------------------------------------------- hand examples


def test_embed_single_and_two_tokens():
    E = Tensor(np.arange(12.0).reshape(4, 3))
    f = toy_flag(n=2, n_groups=1)
    b = make_batch([f], 4, [[[2], [1, 3]]])
    out = embed_nodes(b, E).data
    assert out[0].tolist() == E.data[2].tolist()
    assert np.allclose(out[1], (E.data[1] + E.data[3]) / 2, rtol=0, atol=1e-15)
    assert not embed_nodes(b, Tensor(np.zeros((4, 3)))).data.any()


def test_sage_hand_table():
    # path 0 - 1 - 2 with edges both ways; in-neighbours 0:{1} 1:{0,2} 2:{1}
    H = Tensor(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
    A = sp.csr_matrix(np.array([[0, 1, 0], [0.5, 0, 0.5], [0, 1, 0]]))
    W = Tensor(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, -1.0], [0.0, 2.0]]))
    b = Tensor(np.array([0.5, -0.5]))
    assert sage_forward(H, A, W, b, True).data.tolist() == [[1.5, 0.0], [1.5, 2.0], [1.5, 1.5]]
    assert sage_forward(H, A, W, b, False).data.tolist() == [[1.5, -0.5], [1.5, 2.0], [1.5, 1.5]]


def test_sage_isolated_node_uses_self_only():
    H = Tensor(np.array([[2.0, -1.0]]))
    W = Tensor(np.vstack([np.full((2, 2), 9.0), np.eye(2)]))
    out = sage_forward(H, sp.csr_matrix((1, 1)), W, Tensor(np.zeros(2)), False).data
    assert out.tolist() == [[2.0, -1.0]]


def test_sage_symmetric_pair():
    H = Tensor(np.array([[0.3, 0.7], [0.3, 0.7]]))
    A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    W = Tensor(np.random.default_rng(0).standard_normal((4, 3)))
    out = sage_forward(H, A, W, Tensor(np.zeros(3)), True).data
    assert np.array_equal(out[0], out[1])


def test_gat_hand_attention_table():
    S = Tensor(np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0]]))
    src = np.array([0, 2, 0, 1, 2])
    dst = np.array([1, 1, 0, 1, 2])
    W = Tensor(np.eye(2))
    a = Tensor(np.array([[1.0], [0.0], [0.0], [-1.0]]))
    out = gat_forward(S, src, dst, [(W, a)], 0.2).data
    # dst 1: logits LeakyReLU(z1[0] - zu[1]) = 0, 0, -0.2 for u = 0, 2, 1
    w = math.exp(-0.2)
    expect1 = [3 / (2 + w), w / (2 + w)]
    assert np.allclose(out[1], expect1, rtol=0, atol=1e-15)
    assert out[0].tolist() == [1.0, 0.0] and out[2].tolist() == [2.0, 0.0]


def test_gat_single_supernode():
    rng = np.random.default_rng(1)
    S = Tensor(rng.standard_normal((1, 3)))
    heads = [(Tensor(rng.standard_normal((3, 2))), Tensor(rng.standard_normal((4, 1)))) for _ in range(2)]
    out = gat_forward(S, np.array([0]), np.array([0]), heads).data
    expect = np.concatenate([np.maximum(S.data @ w.data, 0) for w, _ in heads], axis=1)
    assert np.allclose(out, expect, rtol=0, atol=1e-15)


def test_gat_symmetric_supernodes():
    S = Tensor(np.array([[0.5, -0.2], [0.5, -0.2]]))
    rng = np.random.default_rng(2)
    heads = [(Tensor(rng.standard_normal((2, 2))), Tensor(rng.standard_normal((4, 1))))]
    out = gat_forward(S, np.array([0, 1, 0, 1]), np.array([1, 0, 0, 1]), heads).data
    assert np.array_equal(out[0], out[1])


def test_cg_pool_single_group_and_singletons():
    f = toy_flag(n=4, n_groups=1)
    H = Tensor(np.random.default_rng(0).standard_normal((4, 3)))
    b = make_batch([f], 5, [[[2]]] * 4)
    assert np.allclose(cg_pool(H, b).data, H.data.mean(0, keepdims=True), rtol=0, atol=1e-15)
    f2 = toy_flag(n=3, n_groups=1)
    f2.node_decls = [100, 201, 202]
    f2.node_ids = [100, 201, 202]
    build_pool_map(f2)
    H2 = Tensor(np.random.default_rng(1).standard_normal((3, 2)))
    S = cg_pool(H2, make_batch([f2], 5, [[[2]]] * 3)).data
    assert sorted(map(tuple, S)) == sorted(map(tuple, H2.data))


def test_zero_classifier_uniform():
    params = {f"clf{k}.weight": Tensor(np.zeros((5, 5 if k < 3 else 4))) for k in (1, 2, 3)}
    params.update({f"clf{k}.bias": Tensor(np.zeros(5 if k < 3 else 4)) for k in (1, 2, 3)})
    h = Tensor(np.random.default_rng(0).standard_normal((2, 5)))
    probs = nn.row_softmax(classifier_logits(h, params, 3, 0.3, False, None)).data
    assert probs.tolist() == [[0.25] * 4] * 2


def test_readout_single_supernode():
    f = toy_flag(n=2, n_groups=1)
    b = make_batch([f], 4, [[[2], [3]]])
    S = Tensor(np.array([[1.5, -2.0]]))
    assert readout(S, b).data.tolist() == [[1.5, -2.0]]


def test_empty_graph_rejected():
    f = Flag(target_function=1, coverage=1, node_ids=[], node_types=[], texts=[], node_decls=[], edges=[])
    with pytest.raises(EmptyGraph):
        make_batch([f], 4, [[]])


# --------------------------------------------------------- full model


def _setup(seed=0, n_flags=1, vocab=9, C=3):
    cfg = ModelConfig(vocab_size=vocab, num_classes=C, **TOY)
    params = init_params(cfg, seed)
    flags = [toy_flag(seed + i) for i in range(n_flags)]
    toks = [toy_tokens(f, vocab, seed + i) for i, f in enumerate(flags)]
    return cfg, params, flags, toks


def test_probabilities_normalised_and_eval_deterministic():
    cfg, params, flags, toks = _setup(n_flags=3)
    b = make_batch(flags, cfg.vocab_size, toks)
    p1 = full_forward(b, params, cfg).data
    p2 = full_forward(b, params, cfg).data
    assert np.array_equal(p1, p2)
    assert np.all(np.abs(p1.sum(1) - 1) <= 1e-12)


def _permute(f, toks, perm):
    """Reorder nodes: new position i holds old node perm[i]."""
    inv = {old: new for new, old in enumerate(perm)}
    g = Flag(
        target_function=f.target_function, coverage=f.coverage,
        node_ids=[f.node_ids[i] for i in perm], node_types=[f.node_types[i] for i in perm],
        texts=[f.texts[i] for i in perm], node_decls=[f.node_decls[i] for i in perm],
        edges=sorted((inv[u], inv[v], k) for u, v, k in f.edges),
        pool_map=[f.pool_map[i] for i in perm], groups=list(f.groups),
    )
    return g, [toks[i] for i in perm]


def test_node_permutation_invariance():
    cfg, params, (f,), (t,) = _setup(seed=3)
    base = full_forward(make_batch([f], cfg.vocab_size, [t]), params, cfg).data
    perm = list(np.random.default_rng(0).permutation(f.num_nodes))
    g, tg = _permute(f, t, perm)
    out = full_forward(make_batch([g], cfg.vocab_size, [tg]), params, cfg).data
    assert np.max(np.abs(out - base)) <= 1e-9


def test_supernode_permutation_invariance():
    cfg, params, (f,), (t,) = _setup(seed=4)
    base = full_forward(make_batch([f], cfg.vocab_size, [t]), params, cfg).data
    order = [2, 0, 1]  # new group index of each old group
    g = Flag(**{**f.__dict__})
    g.pool_map = [order[p] for p in f.pool_map]
    g.groups = [None] * 3
    for old, new in enumerate(order):
        g.groups[new] = f.groups[old]
    out = full_forward(make_batch([g], cfg.vocab_size, [t]), params, cfg).data
    assert np.max(np.abs(out - base)) <= 1e-9


def test_batched_equals_individual():
    cfg, params, flags, toks = _setup(seed=5, n_flags=4)
    together = full_forward(make_batch(flags, cfg.vocab_size, toks), params, cfg).data
    for i, (f, t) in enumerate(zip(flags, toks)):
        alone = full_forward(make_batch([f], cfg.vocab_size, [t]), params, cfg).data
        assert np.max(np.abs(alone[0] - together[i])) <= 1e-9


def test_train_mode_needs_rng_and_differs():
    cfg, params, flags, toks = _setup(n_flags=2)
    b = make_batch(flags, cfg.vocab_size, toks)
    with pytest.raises(ValueError):
        forward_logits(b, params, cfg, train=True)
    a = forward_logits(b, params, cfg, train=True, rng=np.random.default_rng(0)).data
    c = forward_logits(b, params, cfg, train=True, rng=np.random.default_rng(0)).data
    assert np.array_equal(a, c)


# ------------------------------------------------------------ grad checks


def test_gradcheck_embedding():
    cfg, params, (f,), (t,) = _setup()
    b = make_batch([f], cfg.vocab_size, [t])
    E = params["embedding"]
    c = Tensor(np.random.default_rng(0).standard_normal((f.num_nodes, cfg.embed_dim)))
    assert nn.grad_check(lambda: nn.sum_all(nn.mul(embed_nodes(b, E), c)), {"E": E}) < 1e-5


@pytest.mark.parametrize("activation", [True, False])
def test_gradcheck_sage(activation):
    cfg, params, (f,), (t,) = _setup(seed=1)
    b = make_batch([f], cfg.vocab_size, [t])
    rng = np.random.default_rng(1)
    H = P(rng.standard_normal((f.num_nodes, 4)))
    W, bias = P(rng.standard_normal((8, 3))), P(rng.standard_normal(3))
    c = Tensor(rng.standard_normal((f.num_nodes, 3)))
    fn = lambda: nn.sum_all(nn.mul(sage_forward(H, b.neighbor_mean, W, bias, activation), c))  # noqa: E731
    assert nn.grad_check(fn, {"H": H, "W": W, "b": bias}) < 1e-5


def test_gradcheck_gat_attention():
    rng = np.random.default_rng(2)
    S = P(rng.standard_normal((4, 3)))
    src = np.array([0, 1, 2, 3, 0, 2, 3, 1])
    dst = np.array([0, 1, 2, 3, 1, 1, 0, 2])
    heads = [(P(rng.standard_normal((3, 2))), P(rng.standard_normal((4, 1)))) for _ in range(2)]
    c = Tensor(rng.standard_normal((4, 4)))
    params = {"S": S}
    for i, (w, a) in enumerate(heads):
        params[f"w{i}"], params[f"a{i}"] = w, a
    fn = lambda: nn.sum_all(nn.mul(gat_forward(S, src, dst, heads, 0.2), c))  # noqa: E731
    assert nn.grad_check(fn, params) < 1e-4


def test_gradcheck_classifier():
    rng = np.random.default_rng(3)
    params = {}
    dims = [5, 4, 4, 3]
    for k in range(1, 4):
        params[f"clf{k}.weight"] = P(rng.standard_normal((dims[k - 1], dims[k])))
        params[f"clf{k}.bias"] = P(rng.standard_normal(dims[k]) * 0.1)
    h = Tensor(rng.standard_normal((6, 5)))
    y = [0, 1, 2, 2, 1, 0]
    fn = lambda: nn.cross_entropy(classifier_logits(h, params, 3, 0.3, False, None), y)  # noqa: E731
    assert nn.grad_check(fn, params) < 1e-4


def test_gradcheck_full_model():
    # seed chosen so no bias-free GAT ReLU is dead at toy width
    cfg, params, flags, toks = _setup(seed=9, n_flags=2)
    rng = np.random.default_rng(9)
    for k, v in params.items():
        if k.endswith("bias"):
            # off the ReLU kink that zero init would sit on
            v.data[...] = rng.uniform(0.1, 0.5, v.data.shape)
    b = make_batch(flags, cfg.vocab_size, toks, [0, 2])
    fn = lambda: nn.cross_entropy(forward_logits(b, params, cfg), b.labels)  # noqa: E731
    assert nn.grad_check(fn, params) < 1e-4
    assert all(np.abs(p.grad).max() > 0 for p in params.values())
