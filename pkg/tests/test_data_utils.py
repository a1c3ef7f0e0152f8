import numpy as np
import pytest

from data_utils import (
    build_ego_dataset,
    get_dataset,
    load_collection,
    load_graph,
    planted_homophily_graph,
    save_collection,
    save_graph,
)
from errors import ConfigError, DataError
from graph import Graph, GraphCollection, graph_homophily_ratio


def _write(tmp_path, text: str, name: str = "graph.txt"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_graph_csr(tmp_path):
    path = _write(
        tmp_path,
        "# three nodes\nnodes 3 features 2 classes 2\n"
        "node 0 1.0 0.0 label 0\nnode 1 0.0 1.0 label 1\nnode 2 0.5 0.5 label 0\n"
        "edges\n0 1\n1 2\n",
    )
    g = load_graph(path)
    assert g.row_offsets.tolist() == [0, 1, 3, 4]
    assert g.labels.tolist() == [0, 1, 0]
    assert g.num_classes == 2
    assert np.allclose(g.features[2], [0.5, 0.5])


def test_load_graph_duplicate_edge(tmp_path):
    path = _write(tmp_path, "nodes 2 features 1 classes none\nnode 0 1\nnode 1 1\nedges\n0 1\n0 1\n")
    g = load_graph(path)
    assert g.num_edges == 1
    assert g.labels is None


@pytest.mark.parametrize(
    "body, message",
    [
        ("nodes 3 features 1 classes none\nnode 0 1\nnode 1 1\nnode 2 1\nedges\n0 7\n", "node index out of range"),
        ("nodes 1 features 1 classes 2\nnode 0 1 label 2\nedges\n", "label index 2 >= declared class count 2"),
        ("nodes 1 features 1 classes 2\nnode 0 1 label -1\nedges\n", "negative label index -1"),
        ("nodes 1 features 2 classes none\nnode 0 1 x\nedges\n", "non-numeric feature"),
        ("nodes two features 1 classes none\n", "non-integer"),
        ("graph 1\n", "malformed header"),
        ("nodes 2 features 1 classes none\nnode 0 1\nedges\n", "missing node lines"),
    ],
)
def test_load_graph_errors_name_location(tmp_path, body, message):
    path = _write(tmp_path, body)
    with pytest.raises(DataError, match=message) as err:
        load_graph(path)
    assert str(path) in str(err.value)


def test_save_load_graph(tmp_path, dating_graph):
    save_graph(dating_graph, tmp_path / "dating.txt")
    loaded = load_graph(tmp_path / "dating.txt")
    assert np.array_equal(loaded.row_offsets, dating_graph.row_offsets)
    assert np.array_equal(loaded.col_indices, dating_graph.col_indices)
    assert np.array_equal(loaded.features, dating_graph.features)
    assert np.array_equal(loaded.labels, dating_graph.labels)


def test_save_load_collection(tmp_path, triangle):
    collection = GraphCollection((triangle, triangle.with_features(np.zeros((3, 3)))), np.array([1, 0]))
    save_collection(collection, tmp_path / "collection")
    loaded = load_collection(tmp_path / "collection")
    assert len(loaded) == 2
    assert loaded.graph_labels.tolist() == [1, 0]
    assert np.array_equal(loaded.graphs[1].features, np.zeros((3, 3)))


def test_load_collection_rejects_mixed_dims(tmp_path, triangle, path_graph):
    save_collection(GraphCollection((triangle, path_graph)), tmp_path / "mixed")
    with pytest.raises(DataError, match="different feature dims"):
        load_collection(tmp_path / "mixed")


def test_build_ego_dataset_path():
    g = Graph.from_edges(3, [(0, 1), (1, 2)], np.eye(3), [0, 1, 0])
    collection = build_ego_dataset(g, 1)
    assert len(collection) == 3
    assert collection.graph_labels.tolist() == [0, 1, 0]
    assert [graph.num_nodes for graph in collection.graphs] == [2, 3, 2]
    assert collection.centers.tolist() == [0, 1, 2]


def test_build_ego_dataset_star_and_zero_delta(star):
    assert build_ego_dataset(star, 1).graphs[0].num_nodes == 5
    assert build_ego_dataset(star, 1).graphs[0].num_edges == 4
    assert all(graph.num_nodes == 1 for graph in build_ego_dataset(star, 0).graphs)


def test_build_ego_dataset_requires_labels():
    with pytest.raises(DataError):
        build_ego_dataset(Graph.from_edges(2, [(0, 1)]), 1)


def test_planted_graph_extremes():
    assert graph_homophily_ratio(planted_homophily_graph(40, 2, 1.0, 4.0, seed=1)) == 1.0
    assert graph_homophily_ratio(planted_homophily_graph(40, 2, 0.0, 4.0, seed=1)) <= 0.05


def test_planted_graph_half():
    assert 0.45 <= graph_homophily_ratio(planted_homophily_graph(200, 3, 0.5, 4.0, seed=3)) <= 0.55


@pytest.mark.parametrize("target", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
def test_planted_graph_realizes_target(target):
    for seed in range(10):
        g = planted_homophily_graph(60, 3, target, 4.0, seed)
        assert abs(graph_homophily_ratio(g) - target) <= 1.0 / g.num_edges


def test_planted_graph_features_and_determinism():
    a = planted_homophily_graph(30, 3, 0.4, 3.0, seed=5)
    b = planted_homophily_graph(30, 3, 0.4, 3.0, seed=5)
    assert np.array_equal(a.col_indices, b.col_indices)
    assert np.array_equal(a.features, b.features)
    assert np.all(np.abs(a.features - np.eye(3)[a.labels]) <= 0.01)


def test_planted_graph_invalid():
    with pytest.raises(DataError):
        planted_homophily_graph(3, 2, 0.5, 2.0, seed=0)
    with pytest.raises(DataError):
        planted_homophily_graph(10, 2, 1.5, 2.0, seed=0)
    with pytest.raises(DataError, match="infeasible"):
        planted_homophily_graph(4, 2, 1.0, 3.0, seed=0)


def test_get_dataset(tmp_path, dating_graph):
    g = get_dataset("planted", planted_nodes=30, planted_classes=3)
    assert isinstance(g, Graph) and g.num_nodes == 30
    save_graph(dating_graph, tmp_path / "dating.txt")
    collection = get_dataset(str(tmp_path / "dating.txt"), "graph", ego_delta=1)
    assert isinstance(collection, GraphCollection) and len(collection) == 6
    with pytest.raises(ConfigError):
        get_dataset("planted", "edge")
