import jax.numpy as jnp
import numpy as np
import pytest

from errors import ConfigError, FreezeError, NumericError
from graph import Graph
from model import (
    GcnEncoder,
    encode,
    encode_backward,
    freeze,
    gcn_apply,
    get_encoder,
    init_encoder,
    mean_adjacency,
    normalize_adjacency,
    parameter_digest,
)
from numerics import Param, adam_step, finite_difference_check


def _linear_encoder(*weights) -> GcnEncoder:
    return GcnEncoder([Param.create(w) for w in weights], ["linear"] * len(weights))


def test_normalize_adjacency_examples(edge_graph, triangle):
    isolated = Graph.from_edges(1, [])
    assert np.allclose(normalize_adjacency(isolated).to_dense(), [[1.0]])
    assert np.allclose(normalize_adjacency(edge_graph).to_dense(), 0.5)
    assert np.allclose(normalize_adjacency(triangle).to_dense(), 1.0 / 3.0)


def test_normalize_adjacency_symmetric(dating_graph):
    dense = np.asarray(normalize_adjacency(dating_graph).to_dense())
    assert np.allclose(dense, dense.T)
    assert np.all(np.diag(dense) > 0)


def test_encode_without_layers_is_identity(dating_graph):
    enc = GcnEncoder([], [])
    assert np.allclose(encode(enc, dating_graph), dating_graph.features)


def test_encode_isolated_node():
    g = Graph.from_edges(3, [(0, 1)], np.array([[1.0, -1.0], [2.0, 0.0], [-3.0, 4.0]]))
    enc = GcnEncoder([Param.create(jnp.eye(2))], ["relu"])
    assert np.allclose(encode(enc, g)[2], [0.0, 4.0])


def test_encode_matches_dense_oracle(edge_graph):
    w = np.array([[1.0, 2.0, 0.0], [0.5, -1.0, 3.0]])
    out = encode(_linear_encoder(w), edge_graph)
    a_hat = np.full((2, 2), 0.5)
    assert np.allclose(out, a_hat @ edge_graph.features @ w)


def test_encode_dim_mismatch(edge_graph):
    with pytest.raises(NumericError):
        encode(init_encoder([3, 4]), edge_graph)


def test_encoder_dims_must_chain():
    with pytest.raises(ConfigError):
        GcnEncoder([Param.create(jnp.ones((2, 3))), Param.create(jnp.ones((4, 1)))], ["relu", "linear"])
    with pytest.raises(ConfigError):
        get_encoder("gat", 2, [4])


def test_init_encoder_last_layer_linear():
    enc = init_encoder([5, 8, 4], "relu", seed=39)
    assert enc.activations == ["relu", "linear"]
    assert (enc.in_dim, enc.out_dim) == (5, 4)


def test_encode_is_permutation_equivariant(dating_graph):
    enc = init_encoder([3, 6, 4], "relu", seed=2)
    perm = np.array([3, 0, 5, 1, 4, 2])
    inverse = np.argsort(perm)
    edges = [(inverse[u], inverse[v]) for u, v in dating_graph.edge_list()]
    permuted = Graph.from_edges(6, edges, dating_graph.features[perm], dating_graph.labels[perm])
    assert np.allclose(encode(enc, permuted), np.asarray(encode(enc, dating_graph))[perm], atol=1e-12)


def test_encode_without_edges_is_per_node():
    features = np.random.default_rng(0).normal(size=(4, 3))
    enc = init_encoder([3, 5, 2], "tanh", seed=1)
    full = encode(enc, Graph.from_edges(4, [], features))
    single = encode(enc, Graph.from_edges(1, [], features[2:3]))
    assert np.allclose(full[2], single[0])


def test_encode_backward_zero_upstream(dating_graph):
    enc = init_encoder([3, 4, 2], seed=0)
    encode_backward(enc, dating_graph, jnp.zeros((6, 2)))
    assert all(np.allclose(p.grad, 0.0) for p in enc.layers)


def test_encode_backward_linear_identity(edge_graph):
    enc = _linear_encoder(np.array([[1.0], [2.0]]))
    upstream = jnp.array([[1.0], [-2.0]])
    encode_backward(enc, edge_graph, upstream)
    a_hat_x = np.full((2, 2), 0.5) @ edge_graph.features
    assert np.allclose(enc.layers[0].grad, a_hat_x.T @ np.asarray(upstream))


@pytest.mark.parametrize("seed", range(5))
def test_encode_backward_finite_differences(dating_graph, seed):
    enc = init_encoder([3, 4, 2], "tanh", seed=seed)
    target = jnp.asarray(np.random.default_rng(seed).normal(size=(6, 2)))
    encode_backward(enc, dating_graph, target)
    op = normalize_adjacency(dating_graph)

    def f(weights):
        out = gcn_apply(weights, op.rows, op.cols, op.values, jnp.asarray(dating_graph.features), ("tanh", "linear"))
        return jnp.sum(out * target)

    assert finite_difference_check(f, enc.layers) < 1e-4


def test_freeze_contract(dating_graph):
    enc = init_encoder([3, 4], seed=0)
    digest = parameter_digest(enc)
    freeze(enc)
    with pytest.raises(FreezeError):
        encode_backward(enc, dating_graph, jnp.ones((6, 4)))
    with pytest.raises(FreezeError):
        adam_step(enc.layers)
    assert parameter_digest(enc) == digest


def test_digest_changes_after_step(dating_graph):
    enc = init_encoder([3, 4], seed=0)
    digest = parameter_digest(enc)
    encode_backward(enc, dating_graph, jnp.ones((6, 4)))
    adam_step(enc.layers, lr=1e-2)
    assert parameter_digest(enc) != digest
    assert parameter_digest(init_encoder([3, 4], seed=0)) == digest


def test_mean_adjacency_examples(star):
    dense = np.asarray(mean_adjacency(star).to_dense())
    assert np.allclose(dense[0], [0.0, 0.25, 0.25, 0.25, 0.25])
    assert np.allclose(dense[1:, 0], 1.0)
    assert np.allclose(np.diag(dense), 0.0)
    assert np.allclose(mean_adjacency(Graph.from_edges(2, [])).to_dense(), 0.0)


def test_sage_encoder_layout():
    enc = get_encoder("sage", 5, [8, 4], "relu", seed=39)
    assert enc.kind == "sage" and enc.root
    assert [p.shape for p in enc.layers] == [(5, 8), (5, 8), (8, 4), (8, 4)]
    assert enc.activations == ["relu", "linear"]
    assert (enc.in_dim, enc.out_dim) == (5, 4)
    with pytest.raises(ConfigError):
        GcnEncoder(enc.layers[:3], ["relu", "linear"], "sage")
    with pytest.raises(ConfigError):
        GcnEncoder([Param.create(jnp.ones((2, 3))), Param.create(jnp.ones((3, 3)))], ["linear"], "sage")
    with pytest.raises(ConfigError):
        GcnEncoder([], [], "gat")


def test_sage_encode_matches_dense_oracle(star):
    w = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0], [0.5, 0.0], [0.0, -1.0]])
    r = np.arange(10.0).reshape(5, 2) / 10.0
    enc = GcnEncoder([Param.create(w), Param.create(r)], ["linear"], "sage")
    a_mean = np.asarray(mean_adjacency(star).to_dense())
    assert np.allclose(encode(enc, star), a_mean @ star.features @ w + star.features @ r)


def test_sage_isolated_node_keeps_own_features():
    g = Graph.from_edges(3, [(0, 1)], np.array([[1.0, -1.0], [2.0, 0.0], [-3.0, 4.0]]))
    enc = GcnEncoder([Param.create(5.0 * jnp.eye(2)), Param.create(jnp.eye(2))], ["relu"], "sage")
    out = np.asarray(encode(enc, g))
    assert np.allclose(out[2], [0.0, 4.0])
    assert np.allclose(out[0], [11.0, 0.0])


@pytest.mark.parametrize("seed", range(5))
def test_sage_encode_backward_finite_differences(dating_graph, seed):
    enc = init_encoder([3, 4, 2], "tanh", seed=seed, kind="sage")
    target = jnp.asarray(np.random.default_rng(seed).normal(size=(6, 2)))
    encode_backward(enc, dating_graph, target)
    op = mean_adjacency(dating_graph)

    def f(weights):
        out = gcn_apply(
            weights, op.rows, op.cols, op.values, jnp.asarray(dating_graph.features), ("tanh", "linear"), True
        )
        return jnp.sum(out * target)

    assert finite_difference_check(f, enc.layers) < 1e-4


def test_digest_depends_on_kind():
    gcn = init_encoder([3, 4], seed=0)
    sage = init_encoder([3, 4], seed=0, kind="sage")
    assert parameter_digest(gcn) != parameter_digest(sage)
    sage.layers[1].value = sage.layers[1].value + 1.0
    assert parameter_digest(sage) != parameter_digest(init_encoder([3, 4], seed=0, kind="sage"))
