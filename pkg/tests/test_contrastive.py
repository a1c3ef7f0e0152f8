import jax.numpy as jnp
import numpy as np
import pytest
import torch

from contrastive import (
    HOMOPHILY,
    NON_HOMOPHILY,
    ContrastiveTask,
    SimilarityKernel,
    augment_edge_drop,
    build_dgi_task,
    build_graphcl_task,
    build_link_prediction_task,
    classify_sample,
    drop_grouped_edges,
    get_pretrain_task,
    graphcl_instances,
    handle_table,
    is_homophily_task,
    standardized_contrastive_loss,
)
from data_utils import planted_homophily_graph
from errors import ConfigError, DataError, InvalidTripletError, KernelError
from graph import Graph, GraphCollection
from model import encode, init_encoder


def _single_anchor_task(g: Graph, positives, negatives) -> ContrastiveTask:
    positives = np.atleast_2d(positives)
    negatives = np.atleast_2d(negatives)
    return ContrastiveTask(
        g,
        np.array([0]),
        positives,
        np.ones_like(positives, dtype=bool),
        negatives,
        np.ones_like(negatives, dtype=bool),
        source_rows=g.num_nodes,
    )


@pytest.fixture
def line4() -> Graph:
    return Graph.from_edges(4, [(0, 1), (0, 2)], np.eye(4))


def test_loss_symmetric_kernel(line4):
    emb = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 0.0]])
    loss, p = standardized_contrastive_loss(emb, _single_anchor_task(line4, [1], [3]))
    # cos(anchor, pos) = 0 and cos(anchor, zero vector) = 0
    assert p[0] == pytest.approx(0.5)
    assert loss == pytest.approx(np.log(2))


def test_loss_scalar_example(line4):
    emb = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    loss, p = standardized_contrastive_loss(emb, _single_anchor_task(line4, [1], [3]), SimilarityKernel(tau=1.0))
    assert p[0] == pytest.approx(np.e / (np.e + 1))
    assert loss == pytest.approx(0.3133, abs=1e-4)


def test_loss_ratio_invariance(line4):
    emb = np.random.default_rng(0).normal(size=(4, 3))
    single, _ = standardized_contrastive_loss(emb, _single_anchor_task(line4, [1], [3]))
    doubled, _ = standardized_contrastive_loss(emb, _single_anchor_task(line4, [1, 1], [3, 3]))
    assert doubled == pytest.approx(single)


def test_loss_directional(line4):
    emb = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0], [0.5, 0.5]])
    task = _single_anchor_task(line4, [1], [3])
    base, _ = standardized_contrastive_loss(emb, task)
    closer_positive = emb.copy()
    closer_positive[1] = [0.9, 0.1]
    closer_negative = emb.copy()
    closer_negative[3] = [0.9, 0.1]
    assert standardized_contrastive_loss(closer_positive, task)[0] < base
    assert standardized_contrastive_loss(closer_negative, task)[0] > base


def test_loss_rejects_raw_kernel(line4):
    with pytest.raises(KernelError):
        standardized_contrastive_loss(np.eye(4), _single_anchor_task(line4, [1], [3]), SimilarityKernel("raw"))
    with pytest.raises(ConfigError):
        SimilarityKernel("dot")
    with pytest.raises(ConfigError):
        SimilarityKernel(tau=0.0)


def test_task_requires_positive_and_negative(line4):
    with pytest.raises(DataError):
        ContrastiveTask(
            line4, np.array([0]), np.array([[1]]), np.array([[False]]),
            np.array([[3]]), np.array([[True]]), source_rows=4,
        )
    with pytest.raises(DataError):
        _single_anchor_task(line4, [9], [3])


def _cos_embeddings(cos_a: float, cos_b: float) -> np.ndarray:
    """Anchor 0 along x; node 1 at cosine cos_a, node 3 at cosine cos_b."""

    def at(cos: float) -> list:
        return [cos, np.sqrt(1 - cos**2)]

    return np.array([[1.0, 0.0], at(cos_a), [0.0, 1.0], at(cos_b)])


@pytest.mark.parametrize(
    "cos_a, cos_b, expected",
    [(0.9, 0.1, HOMOPHILY), (0.3, 0.3, NON_HOMOPHILY), (0.2, 0.5, NON_HOMOPHILY)],
)
def test_classify_sample(line4, cos_a, cos_b, expected):
    assert classify_sample(0, 1, 3, _cos_embeddings(cos_a, cos_b), line4) == expected


def test_classify_sample_invariant_under_monotone_transform(line4):
    emb = np.random.default_rng(4).normal(size=(4, 3))
    kind = classify_sample(0, 1, 3, emb, line4)
    kernel = SimilarityKernel(tau=0.3)
    cos_a = float(np.dot(emb[0], emb[1]) / np.linalg.norm(emb[0]) / np.linalg.norm(emb[1]))
    cos_b = float(np.dot(emb[0], emb[3]) / np.linalg.norm(emb[0]) / np.linalg.norm(emb[3]))
    assert (float(kernel(jnp.asarray(cos_a))) > float(kernel(jnp.asarray(cos_b)))) == (kind == HOMOPHILY)


def test_classify_sample_invalid_triplet(line4):
    emb = np.eye(4)
    with pytest.raises(InvalidTripletError):
        classify_sample(0, 3, 1, emb, line4)
    with pytest.raises(InvalidTripletError):
        classify_sample(0, 1, 2, emb, line4)
    with pytest.raises(InvalidTripletError):
        classify_sample(0, 1, 0, emb, line4)


def test_link_prediction_infeasible_on_path():
    path = Graph.from_edges(3, [(0, 1), (1, 2)])
    with pytest.raises(DataError, match="non-neighbors"):
        build_link_prediction_task(path, 1, seed=0)


@pytest.mark.parametrize("seed", range(20))
def test_task_taxonomy(seed):
    g = planted_homophily_graph(30, 3, 0.3, 3.0, seed)
    link = build_link_prediction_task(g, 2, seed)
    assert is_homophily_task(link, g)
    assert not is_homophily_task(build_graphcl_task(g, 0.2, seed, delta=1), g)
    assert not is_homophily_task(build_dgi_task(g, seed), g)


def test_link_prediction_deterministic(dating_graph):
    a = build_link_prediction_task(dating_graph, 1, seed=5)
    b = build_link_prediction_task(dating_graph, 1, seed=5)
    assert np.array_equal(a.positives, b.positives)
    assert np.array_equal(a.negatives, b.negatives)


def test_task_with_non_neighbor_positive_is_not_homophily(line4):
    task = _single_anchor_task(line4, [3], [1])
    assert not is_homophily_task(task, line4)


def test_augment_edge_drop():
    ring = Graph.from_edges(10, [(i, (i + 1) % 10) for i in range(10)])
    assert np.array_equal(augment_edge_drop(ring, 0.0, seed=1).edge_list(), ring.edge_list())
    dropped = augment_edge_drop(ring, 0.2, seed=1)
    assert dropped.num_edges == 8
    assert np.array_equal(dropped.edge_list(), augment_edge_drop(ring, 0.2, seed=1).edge_list())
    with pytest.raises(ConfigError):
        augment_edge_drop(ring, 1.0)


def test_drop_grouped_edges_per_group_counts():
    edges = np.array([(i, i + 1) for i in range(12)])
    groups = np.array([0] * 5 + [1] * 2 + [2] * 5)
    kept = drop_grouped_edges(edges, groups, 4, 0.5, torch.Generator().manual_seed(3))
    kept_groups = groups[np.searchsorted(edges[:, 0], kept[:, 0])]
    assert np.bincount(kept_groups, minlength=4).tolist() == [3, 1, 3, 0]
    assert np.all(np.diff(kept[:, 0]) > 0)
    again = drop_grouped_edges(edges, groups, 4, 0.5, torch.Generator().manual_seed(3))
    assert np.array_equal(kept, again)
    with pytest.raises(ConfigError):
        drop_grouped_edges(edges, groups, 4, -0.1, torch.Generator())


def test_graphcl_views_drop_edges_per_instance(dating_graph):
    task = build_graphcl_task(dating_graph, 0.5, seed=2, delta=1)
    n = task.graph.num_nodes // 2
    sizes = np.bincount(task.segments, minlength=task.num_segments)
    assert task.num_segments == 12
    assert np.array_equal(sizes[:6], sizes[6:]) and sizes.sum() == 2 * n
    kept = sum(g.num_edges - g.num_edges // 2 for g in graphcl_instances(dating_graph, 1))
    assert task.graph.num_edges == 2 * kept
    assert np.array_equal(task.graph.features[:n], task.graph.features[n:])
    assert task.anchors.tolist() == list(range(2 * n, 2 * n + 6))
    assert task.positives[:, 0].tolist() == list(range(2 * n + 6, 2 * n + 12))


def test_graphcl_collection(triangle):
    collection = GraphCollection((triangle, triangle.with_features(np.eye(3) * 2)))
    task = build_graphcl_task(collection, 0.2, seed=0)
    assert all(len(pos) == 1 for pos in task.positive_sets())
    assert all(len(neg) >= 1 for neg in task.negative_sets())
    assert task.num_segments == 4
    with pytest.raises(DataError):
        build_graphcl_task(GraphCollection((triangle,)), 0.2)


def test_graphcl_unaugmented_pooling_is_mean(triangle):
    other = triangle.with_features(np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 1.0], [3.0, 0.0, 1.0]]))
    task = build_graphcl_task(GraphCollection((triangle, other)), 0.0, seed=0)
    enc = init_encoder([3, 4], seed=0)
    emb = encode(enc, task.graph)
    table = handle_table(emb, jnp.asarray(task.segments), task.num_segments)
    own = encode(enc, other)
    assert np.allclose(table[task.anchors[1]], jnp.mean(own, axis=0))


def test_dgi_task(dating_graph):
    task = build_dgi_task(dating_graph, seed=3)
    true_rows = task.graph.features[: dating_graph.num_nodes]
    corrupted_rows = task.graph.features[dating_graph.num_nodes :]
    assert np.array_equal(true_rows, dating_graph.features)
    assert not np.array_equal(corrupted_rows, dating_graph.features)
    assert np.array_equal(build_dgi_task(dating_graph, seed=3).graph.features, task.graph.features)
    with pytest.raises(DataError):
        build_dgi_task(Graph.from_edges(1, []))


def test_with_sample_appends_anchor(dating_graph):
    task = build_link_prediction_task(dating_graph, 1, seed=0)
    extended = task.with_sample(0, 1, 3)
    assert len(extended.anchors) == len(task.anchors) + 1
    assert extended.positive_sets()[-1].tolist() == [1]
    assert extended.negative_sets()[-1].tolist() == [3]


def test_get_pretrain_task(dating_graph, triangle):
    assert get_pretrain_task("link_prediction", dating_graph, seed=0).name == "link_prediction"
    assert get_pretrain_task("dgi", GraphCollection((triangle, triangle)), seed=0).graph.num_nodes == 12
    with pytest.raises(ConfigError):
        get_pretrain_task("graphacl", dating_graph)
