import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numerics  # noqa: E402,F401  (enables 64-bit jax before any other import)
from graph import Graph  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs on the full-size planted graph")


@pytest.fixture
def path_graph() -> Graph:
    """0-1-2-3 with labels 0, 0, 1, 1."""

    return Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)], np.eye(4), [0, 0, 1, 1])


@pytest.fixture
def triangle() -> Graph:
    return Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)], np.eye(3), [0, 0, 1])


@pytest.fixture
def star() -> Graph:
    """Center 0 with leaves 1..4; labels 0, 0, 0, 1, 1."""

    return Graph.from_edges(5, [(0, 1), (0, 2), (0, 3), (0, 4)], np.eye(5), [0, 0, 0, 1, 1])


@pytest.fixture
def edge_graph() -> Graph:
    return Graph.from_edges(2, [(0, 1)], np.array([[1.0, 0.0], [0.0, 1.0]]), [0, 1])


@pytest.fixture
def dating_graph() -> Graph:
    """Seven edges, exactly two of them between equally labeled nodes (homophily 2/7)."""

    edges = [(0, 1), (0, 2), (1, 3), (2, 3), (3, 4), (4, 5), (5, 0)]
    labels = [0, 0, 1, 1, 0, 1]
    features = np.array(
        [
            [1.0, 0.0, 0.5],
            [0.0, 1.0, 0.5],
            [1.0, 0.1, 0.0],
            [0.0, 1.0, 0.2],
            [0.1, 1.0, 0.0],
            [1.0, 0.0, 0.3],
        ]
    )
    return Graph.from_edges(6, edges, features, labels)
