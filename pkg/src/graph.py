"""
Graph data model: immutable CSR graphs, ego-networks, graph collections and
few-shot tasks, plus homophily analysis.
"""

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from errors import DataError, UndefinedRatioError

logger = logging.getLogger(__name__)

NUM_BUCKETS = 5
ISOLATED = -1
UNLABELED = -1


@dataclass(frozen=True, eq=False)
class Graph:
    """
    Undirected graph with CSR adjacency, dense node features and optional node labels.
    N: Number of nodes.
    D: Feature dim.
    """

    num_nodes: int
    row_offsets: np.ndarray  # [N+1]
    col_indices: np.ndarray  # [2|E|]
    features: np.ndarray  # [N, D]
    labels: Optional[np.ndarray] = None  # [N], -1 for unlabeled nodes
    num_classes: Optional[int] = None

    def __post_init__(self) -> None:
        offsets, cols = self.row_offsets, self.col_indices
        if len(offsets) != self.num_nodes + 1 or offsets[0] != 0:
            raise DataError("row_offsets must have length num_nodes+1 and start at 0")
        if np.any(np.diff(offsets) < 0) or offsets[-1] != len(cols):
            raise DataError("row_offsets must be nondecreasing and end at len(col_indices)")
        if len(cols) and (cols.min() < 0 or cols.max() >= self.num_nodes):
            raise DataError("node index out of range in col_indices")
        if self.features.ndim != 2 or self.features.shape[0] != self.num_nodes:
            raise DataError(f"features must have {self.num_nodes} rows, got shape {self.features.shape}")
        if self.labels is not None and len(self.labels) != self.num_nodes:
            raise DataError("labels must have one entry per node")
        rows = np.repeat(np.arange(self.num_nodes), np.diff(offsets))
        if np.any(rows == cols):
            raise DataError("self-loops must not be stored")
        same_row = rows[1:] == rows[:-1]
        if np.any(cols[1:][same_row] <= cols[:-1][same_row]):
            raise DataError("neighbor entries must be strictly increasing within a row (no duplicates)")
        adj = self.adjacency()
        if (adj != adj.T).nnz:
            raise DataError("adjacency must be symmetric")

    @classmethod
    def from_edges(
        cls,
        num_nodes: int,
        edges: Iterable[Tuple[int, int]],
        features: Optional[np.ndarray] = None,
        labels: Optional[Sequence[int]] = None,
        num_classes: Optional[int] = None,
    ) -> "Graph":
        """
        Builds a graph from an edge list; edges are symmetrized, duplicates collapsed and self-loops dropped.

        Args:
            num_nodes (int): Number of nodes.
            edges (Iterable[Tuple[int, int]]): Undirected edges.
            features (Optional[np.ndarray], optional): Features ([N, D]). Defaults to a single all-ones column.
            labels (Optional[Sequence[int]], optional): Node labels. Defaults to None.
            num_classes (Optional[int], optional): Declared class count. Defaults to max label + 1.

        Raises:
            DataError: Node index out of range.

        Returns:
            Graph: Graph.
        """

        edges = np.asarray(edges if isinstance(edges, np.ndarray) else list(edges), dtype=np.int64).reshape(-1, 2)
        if len(edges) and (edges.min() < 0 or edges.max() >= num_nodes):
            raise DataError("node index out of range")
        n_loops = int(np.sum(edges[:, 0] == edges[:, 1]))
        if n_loops:
            logger.debug(f"Dropping {n_loops} self-loop(s)")
        edges = edges[edges[:, 0] != edges[:, 1]]
        adj = sp.coo_matrix(
            (np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(num_nodes, num_nodes)
        ).tocsr()
        adj = ((adj + adj.T) > 0).astype(np.float64).tocsr()
        adj.sort_indices()
        if features is None:
            features = np.ones((num_nodes, 1))
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if num_classes is None and np.any(labels >= 0):
                num_classes = int(labels.max()) + 1
        return cls(
            num_nodes,
            adj.indptr.astype(np.int64),
            adj.indices.astype(np.int64),
            np.asarray(features, dtype=np.float64),
            labels,
            num_classes,
        )

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""

        return len(self.col_indices) // 2

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def neighbors(self, v: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[v] : self.row_offsets[v + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        row = self.neighbors(u)
        pos = np.searchsorted(row, v)
        return bool(pos < len(row) and row[pos] == v)

    def adjacency(self) -> sp.csr_matrix:
        """Adjacency as a scipy CSR matrix ([N, N])."""

        return sp.csr_matrix(
            (np.ones(len(self.col_indices)), self.col_indices, self.row_offsets),
            shape=(self.num_nodes, self.num_nodes),
        )

    def edge_list(self) -> np.ndarray:
        """Undirected edges (u < v), each listed once ([|E|, 2])."""

        rows = np.repeat(np.arange(self.num_nodes), self.degrees())
        mask = rows < self.col_indices
        return np.stack((rows[mask], self.col_indices[mask]), axis=1)

    def labeled_nodes(self) -> np.ndarray:
        if self.labels is None:
            return np.zeros(0, dtype=np.int64)
        return np.flatnonzero(self.labels >= 0)

    def with_features(self, features: np.ndarray) -> "Graph":
        return Graph(
            self.num_nodes,
            self.row_offsets,
            self.col_indices,
            np.asarray(features, dtype=np.float64),
            self.labels,
            self.num_classes,
        )


@dataclass(frozen=True, eq=False)
class EgoNetwork:
    """Nodes within `delta` hops of `center`, in ascending original id."""

    center: int
    members: np.ndarray  # [M], sorted
    delta: int

    @property
    def local_index(self) -> Dict[int, int]:
        return {int(u): idx for idx, u in enumerate(self.members)}


@dataclass(frozen=True, eq=False)
class GraphCollection:
    """Sequence of graphs with optional per-graph labels."""

    graphs: Tuple[Graph, ...]
    graph_labels: Optional[np.ndarray] = None  # [G]
    centers: Optional[np.ndarray] = None  # [G], ego node ids when built from a single graph

    def __post_init__(self) -> None:
        if self.graph_labels is not None and len(self.graph_labels) != len(self.graphs):
            raise DataError("graph_labels must have one entry per graph")

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def feature_dim(self) -> int:
        return self.graphs[0].feature_dim


@dataclass(frozen=True)
class FewShotTask:
    """k-shot classification episode over nodes or graphs."""

    classes: Tuple[int, ...]
    support: Tuple[Tuple[int, int], ...]
    query: Tuple[Tuple[int, int], ...]
    instance_kind: str = "node"
    shots: int = 0

    def __post_init__(self) -> None:
        classes = set(self.classes)
        if any(c not in classes for _, c in self.support + self.query):
            raise DataError(f"task labels must lie in classes {self.classes}")
        overlap = {idx for idx, _ in self.support} & {idx for idx, _ in self.query}
        if overlap:
            raise DataError(f"support and query share instances {sorted(overlap)[:10]}")
        if self.shots > 0:
            counts = Counter(c for _, c in self.support)
            short = [c for c in self.classes if counts[c] != self.shots]
            if short:
                raise DataError(f"classes {short} do not have exactly {self.shots} support instances")

    @property
    def support_ids(self) -> np.ndarray:
        return np.array([idx for idx, _ in self.support], dtype=np.int64)

    @property
    def support_labels(self) -> np.ndarray:
        return np.array([c for _, c in self.support], dtype=np.int64)

    @property
    def query_ids(self) -> np.ndarray:
        return np.array([idx for idx, _ in self.query], dtype=np.int64)

    @property
    def query_labels(self) -> np.ndarray:
        return np.array([c for _, c in self.query], dtype=np.int64)


def _require_labels(g: Graph, labels: Optional[np.ndarray]) -> np.ndarray:
    labels = g.labels if labels is None else np.asarray(labels, dtype=np.int64)
    if labels is None:
        raise DataError("graph has no labels")
    if len(labels) != g.num_nodes:
        raise DataError("labels must have one entry per node")
    return labels


def graph_homophily_ratio(g: Graph, labels: Optional[np.ndarray] = None) -> float:
    """
    Fraction of undirected edges whose endpoints share a label.

    Args:
        g (Graph): Graph with at least one edge.
        labels (Optional[np.ndarray], optional): Node labels ([N]). Defaults to g.labels.

    Raises:
        UndefinedRatioError: Empty edge set.
        DataError: Missing labels.

    Returns:
        float: Ratio in [0, 1].
    """

    labels = _require_labels(g, labels)
    edges = g.edge_list()
    if len(edges) == 0:
        raise UndefinedRatioError("undefined ratio: graph has no edges")
    if np.any(labels[edges] < 0):
        raise DataError("every node of an edge must be labeled")
    same = int(np.sum(labels[edges[:, 0]] == labels[edges[:, 1]]))
    return same / len(edges)


def _same_label_counts(g: Graph, labels: np.ndarray) -> np.ndarray:
    rows = np.repeat(np.arange(g.num_nodes), g.degrees())
    same = (labels[rows] == labels[g.col_indices]).astype(np.int64)
    return np.bincount(rows, weights=same, minlength=g.num_nodes).astype(np.int64)


def node_homophily_ratios(g: Graph, labels: Optional[np.ndarray] = None) -> np.ndarray:
    """Node homophily ratio of every node; NaN for isolated nodes ([N])."""

    labels = _require_labels(g, labels)
    degrees = g.degrees()
    same = _same_label_counts(g, labels)
    return np.where(degrees > 0, same / np.maximum(degrees, 1), np.nan)


def node_homophily_ratio(g: Graph, labels: Optional[np.ndarray], v: int) -> float:
    """
    Fraction of the neighbors of v that share its label.

    Args:
        g (Graph): Graph.
        labels (Optional[np.ndarray]): Node labels ([N]); None uses g.labels.
        v (int): Node id.

    Raises:
        UndefinedRatioError: v is isolated.

    Returns:
        float: Ratio in [0, 1].
    """

    labels = _require_labels(g, labels)
    neighbors = g.neighbors(v)
    if len(neighbors) == 0:
        raise UndefinedRatioError(f"undefined ratio: node {v} is isolated")
    return int(np.sum(labels[neighbors] == labels[v])) / len(neighbors)


def homophily_buckets(g: Graph, labels: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Assigns each node to a node-homophily bucket [0, 0.2), [0.2, 0.4), [0.4, 0.6), [0.6, 0.8), [0.8, 1.0].

    Args:
        g (Graph): Labeled graph.
        labels (Optional[np.ndarray], optional): Node labels ([N]). Defaults to g.labels.

    Returns:
        np.ndarray: Bucket index per node in {0..4}; -1 for isolated nodes ([N]).
    """

    labels = _require_labels(g, labels)
    degrees = g.degrees()
    same = _same_label_counts(g, labels)
    # Exact integer binning: floor(5 * same / degree)
    safe_degrees = np.maximum(degrees, 1)
    buckets = np.minimum((NUM_BUCKETS * same) // safe_degrees, NUM_BUCKETS - 1)
    return np.where(degrees > 0, buckets, ISOLATED).astype(np.int64)


def ego_network(g: Graph, v: int, delta: int) -> EgoNetwork:
    """
    Breadth-first δ-hop ego-network of v.

    Args:
        g (Graph): Graph.
        v (int): Center node.
        delta (int): Hop count.

    Raises:
        DataError: Invalid node or negative delta.

    Returns:
        EgoNetwork: Ego-network with sorted members.
    """

    if not 0 <= v < g.num_nodes:
        raise DataError(f"node {v} out of range")
    if delta < 0:
        raise DataError(f"delta must be >= 0, got {delta}")
    visited = np.zeros(g.num_nodes, dtype=bool)
    visited[v] = True
    frontier = np.array([v], dtype=np.int64)
    for _ in range(delta):
        if len(frontier) == 0:
            break
        reached = np.concatenate([g.neighbors(u) for u in frontier])
        frontier = np.unique(reached[~visited[reached]])
        visited[frontier] = True
    return EgoNetwork(int(v), np.flatnonzero(visited), delta)


def ego_membership(g: Graph, delta: int) -> sp.csr_matrix:
    """
    Sparse δ-hop reachability: entry (v, u) is 1 iff u is in the ego-network of v.

    Args:
        g (Graph): Graph.
        delta (int): Hop count.

    Returns:
        sp.csr_matrix: Membership matrix ([N, N]) with sorted indices.
    """

    step = (g.adjacency() + sp.identity(g.num_nodes, format="csr")).tocsr()
    reach = sp.identity(g.num_nodes, format="csr")
    for _ in range(delta):
        reach = (reach @ step).tocsr()
        reach.data[:] = 1.0
    reach.sort_indices()
    return reach


def induced_subgraph(g: Graph, members: np.ndarray) -> Graph:
    """
    Induced subgraph on sorted member ids; features and labels are restricted to members.

    Args:
        g (Graph): Parent graph.
        members (np.ndarray): Sorted node ids.

    Returns:
        Graph: Subgraph with local ids 0..|members|-1.
    """

    members = np.asarray(members, dtype=np.int64)
    sub = g.adjacency()[members][:, members].tocsr()
    sub.sort_indices()
    return Graph(
        len(members),
        sub.indptr.astype(np.int64),
        sub.indices.astype(np.int64),
        g.features[members],
        None if g.labels is None else g.labels[members],
        g.num_classes,
    )


def batch_graphs(graphs: Sequence[Graph]) -> Tuple[Graph, np.ndarray]:
    """
    Disjoint union of graphs.
    N: Total number of nodes.

    Args:
        graphs (Sequence[Graph]): Graphs with equal feature dims.

    Returns:
        Tuple[Graph, np.ndarray]:
            union graph,
            graph index per node ([N]).

    Raises:
        DataError: No graphs given.
    """

    if not graphs:
        raise DataError("empty collection")
    sizes = np.array([graph.num_nodes for graph in graphs], dtype=np.int64)
    node_offsets = np.concatenate(([0], np.cumsum(sizes)))
    offsets: List[np.ndarray] = [np.zeros(1, dtype=np.int64)]
    cols: List[np.ndarray] = []
    nnz = 0
    for graph, node_offset in zip(graphs, node_offsets[:-1]):
        offsets.append(graph.row_offsets[1:] + nnz)
        cols.append(graph.col_indices + node_offset)
        nnz += len(graph.col_indices)
    labels = None
    if all(graph.labels is not None for graph in graphs):
        labels = np.concatenate([graph.labels for graph in graphs])
    union = Graph(
        int(sizes.sum()),
        np.concatenate(offsets),
        np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64),
        np.concatenate([graph.features for graph in graphs], axis=0),
        labels,
        graphs[0].num_classes if graphs else None,
    )
    return union, np.repeat(np.arange(len(graphs)), sizes)


def graph_statistics(g: Graph) -> Dict[str, float]:
    """
    Summary statistics used by the homophily analysis command.

    Args:
        g (Graph): Graph.

    Returns:
        Dict[str, float]: nodes, edges, features, classes, isolated, homophily (NaN if undefined).
    """

    stats = {
        "nodes": g.num_nodes,
        "edges": g.num_edges,
        "features": g.feature_dim,
        "classes": g.num_classes if g.num_classes is not None else 0,
        "isolated": int(np.sum(g.degrees() == 0)),
        "homophily": float("nan"),
    }
    if g.labels is not None and g.num_edges > 0 and np.all(g.labels >= 0):
        stats["homophily"] = graph_homophily_ratio(g)
    return stats
