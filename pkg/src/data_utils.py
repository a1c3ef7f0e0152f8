import logging
import os
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import torch

from errors import ConfigError, DataError
from graph import Graph, GraphCollection, ego_network, induced_subgraph

logger = logging.getLogger(__name__)

COLLECTION_INDEX = "collection.txt"


def get_dataset(
    dataset: str,
    task_kind: str = "node",
    ego_delta: int = 2,
    seed: int = 39,
    planted_nodes: int = 300,
    planted_classes: int = 3,
    planted_homophily: float = 0.3,
    planted_degree: float = 3.0,
) -> Graph | GraphCollection:
    """
    Returns dataset specified by config.

    Args:
        dataset (str): Graph file, collection directory, or "planted" for a synthetic graph.
        task_kind (str, optional): node or graph. Defaults to "node".
        ego_delta (int, optional): Ego radius when graph classification runs on a single graph. Defaults to 2.
        seed (int, optional): RNG seed of the planted graph. Defaults to 39.
        planted_nodes (int, optional): Planted graph size. Defaults to 300.
        planted_classes (int, optional): Planted class count. Defaults to 3.
        planted_homophily (float, optional): Planted homophily ratio. Defaults to 0.3.
        planted_degree (float, optional): Planted average degree. Defaults to 3.0.

    Raises:
        ConfigError: Unsupported task kind, or node task on a graph collection.

    Returns:
        Graph | GraphCollection: Graph for node tasks, collection for graph tasks.
    """

    if dataset == "planted":
        data = planted_homophily_graph(
            planted_nodes, planted_classes, planted_homophily, planted_degree, seed
        )
    elif Path(dataset).is_dir():
        data = load_collection(dataset)
    else:
        data = load_graph(dataset)

    if task_kind == "node":
        if isinstance(data, GraphCollection):
            raise ConfigError("Node classification requires a single graph, got a collection")
        return data
    elif task_kind == "graph":
        if isinstance(data, Graph):
            return build_ego_dataset(data, ego_delta)
        return data
    else:
        raise ConfigError(f"Unsupported task kind: {task_kind}")


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


def _parse_int(token: str, what: str, where: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise DataError(f"{where}: non-integer {what} '{token}'") from None


def load_graph(path: str | os.PathLike) -> Graph:
    """
    Loads a graph in the canonical text format.

    Format:
        nodes <N> features <d> classes <C|none>
        node <id> <f_1> ... <f_d> [label <c>]     (N lines)
        edges
        <u> <v>                                   (one line per edge)

    Args:
        path (str | os.PathLike): Graph file.

    Raises:
        DataError: Malformed header, non-numeric feature, node index out of range,
            label index >= declared class count; messages name file and line.

    Returns:
        Graph: Graph with symmetrized, deduplicated edges.
    """

    lines = Path(path).read_text(encoding="utf-8").splitlines()
    entries = [
        (lineno, _strip_comment(line)) for lineno, line in enumerate(lines, start=1)
    ]
    entries = [(lineno, line) for lineno, line in entries if line]
    if not entries:
        raise DataError(f"{path}: empty graph file")

    # Header
    lineno, header = entries[0]
    where = f"{path}:{lineno}"
    tokens = header.split()
    if len(tokens) != 6 or tokens[0] != "nodes" or tokens[2] != "features" or tokens[4] != "classes":
        raise DataError(f"{where}: malformed header, expected 'nodes <N> features <d> classes <C|none>'")
    num_nodes = _parse_int(tokens[1], "node count", where)
    dim = _parse_int(tokens[3], "feature dim", where)
    num_classes = None if tokens[5] == "none" else _parse_int(tokens[5], "class count", where)
    if num_nodes < 0 or dim < 0 or (num_classes is not None and num_classes < 1):
        raise DataError(f"{where}: malformed header, counts must be positive")

    features = np.zeros((num_nodes, dim), dtype=np.float64)
    labels = np.full(num_nodes, -1, dtype=np.int64)
    seen = np.zeros(num_nodes, dtype=bool)
    edges: List[Tuple[int, int]] = []
    in_edges = False

    for lineno, line in entries[1:]:
        where = f"{path}:{lineno}"
        tokens = line.split()
        if in_edges:
            if len(tokens) != 2:
                raise DataError(f"{where}: expected '<u> <v>'")
            u = _parse_int(tokens[0], "node index", where)
            v = _parse_int(tokens[1], "node index", where)
            if not (0 <= u < num_nodes and 0 <= v < num_nodes):
                raise DataError(f"{where}: node index out of range ({u}, {v})")
            edges.append((u, v))
        elif tokens[0] == "edges" and len(tokens) == 1:
            in_edges = True
        elif tokens[0] == "node":
            if len(tokens) < 2:
                raise DataError(f"{where}: missing node id")
            node = _parse_int(tokens[1], "node index", where)
            if not 0 <= node < num_nodes:
                raise DataError(f"{where}: node index out of range ({node})")
            if seen[node]:
                raise DataError(f"{where}: duplicate node {node}")
            values = tokens[2:]
            if len(values) == dim + 2 and values[dim] == "label":
                if num_classes is None:
                    raise DataError(f"{where}: label given but header declares 'classes none'")
                label = _parse_int(values[dim + 1], "label", where)
                if label < 0:
                    raise DataError(f"{where}: negative label index {label}")
                if label >= num_classes:
                    raise DataError(f"{where}: label index {label} >= declared class count {num_classes}")
                labels[node] = label
                values = values[:dim]
            elif len(values) != dim:
                raise DataError(f"{where}: expected {dim} feature values, got {len(values)}")
            try:
                features[node] = [float(value) for value in values]
            except ValueError:
                raise DataError(f"{where}: non-numeric feature token") from None
            if not np.all(np.isfinite(features[node])):
                raise DataError(f"{where}: non-finite feature value")
            seen[node] = True
        else:
            raise DataError(f"{where}: unexpected line '{line}'")

    if not seen.all():
        raise DataError(f"{path}: missing node lines for ids {np.flatnonzero(~seen)[:10].tolist()}")
    if not in_edges:
        raise DataError(f"{path}: missing 'edges' section")

    return Graph.from_edges(
        num_nodes,
        edges,
        features,
        labels if num_classes is not None else None,
        num_classes,
    )


def save_graph(g: Graph, path: str | os.PathLike) -> None:
    """
    Saves a graph in the canonical text format.

    Args:
        g (Graph): Graph.
        path (str | os.PathLike): Target file.
    """

    classes = "none" if g.labels is None else str(g.num_classes)
    lines = [f"nodes {g.num_nodes} features {g.feature_dim} classes {classes}"]
    for node in range(g.num_nodes):
        line = " ".join(["node", str(node)] + [repr(float(value)) for value in g.features[node]])
        if g.labels is not None and g.labels[node] >= 0:
            line += f" label {int(g.labels[node])}"
        lines.append(line)
    lines.append("edges")
    lines.extend(f"{u} {v}" for u, v in g.edge_list())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_collection(path: str | os.PathLike) -> GraphCollection:
    """
    Loads a graph collection: a directory of graph files plus an index `collection.txt`
    with `<filename> <graph_label|none>` per line.

    Args:
        path (str | os.PathLike): Collection directory.

    Raises:
        DataError: Missing index, malformed line, or mixed labeled/unlabeled graphs.

    Returns:
        GraphCollection: Collection in index order.
    """

    index = Path(path, COLLECTION_INDEX)
    if not index.exists():
        raise DataError(f"{path}: missing {COLLECTION_INDEX}")
    graphs, graph_labels = [], []
    for lineno, line in enumerate(index.read_text(encoding="utf-8").splitlines(), start=1):
        line = _strip_comment(line)
        if not line:
            continue
        tokens = line.split()
        where = f"{index}:{lineno}"
        if len(tokens) != 2:
            raise DataError(f"{where}: expected '<filename> <graph_label|none>'")
        graphs.append(load_graph(Path(path, tokens[0])))
        graph_labels.append(None if tokens[1] == "none" else _parse_int(tokens[1], "graph label", where))
    if not graphs:
        raise DataError(f"{index}: empty collection")
    dims = {graph.feature_dim for graph in graphs}
    if len(dims) != 1:
        raise DataError(f"{path}: graphs have different feature dims {sorted(dims)}")
    if all(label is None for label in graph_labels):
        return GraphCollection(tuple(graphs))
    if any(label is None for label in graph_labels):
        raise DataError(f"{index}: graph labels must be given for all graphs or none")
    return GraphCollection(tuple(graphs), np.asarray(graph_labels, dtype=np.int64))


def save_collection(collection: GraphCollection, path: str | os.PathLike) -> None:
    """Saves a collection as graph files plus `collection.txt`."""

    os.makedirs(path, exist_ok=True)
    index_lines = []
    for idx, graph in enumerate(collection.graphs):
        filename = f"graph_{idx}.txt"
        save_graph(graph, Path(path, filename))
        label = "none" if collection.graph_labels is None else str(int(collection.graph_labels[idx]))
        index_lines.append(f"{filename} {label}")
    Path(path, COLLECTION_INDEX).write_text("\n".join(index_lines) + "\n", encoding="utf-8")


def build_ego_dataset(g: Graph, delta: int) -> GraphCollection:
    """
    Builds one induced ego-network graph per labeled node, labeled by its center.

    Args:
        g (Graph): Labeled graph.
        delta (int): Ego radius.

    Raises:
        DataError: Graph has no labels.

    Returns:
        GraphCollection: Ego graphs in ascending center order, with `centers` set.
    """

    if g.labels is None:
        raise DataError("ego dataset requires node labels")
    centers = g.labeled_nodes()
    graphs = tuple(induced_subgraph(g, ego_network(g, int(v), delta).members) for v in centers)
    return GraphCollection(graphs, g.labels[centers].copy(), centers)


def _draw_pairs(
    rng: torch.Generator,
    labels: np.ndarray,
    count: int,
    same_label: bool,
    max_retries: int,
) -> np.ndarray:
    """
    Draws distinct unordered node pairs with equal (or different) labels by rejection.

    Args:
        rng (torch.Generator): Random number generator.
        labels (np.ndarray): Node labels ([N]).
        count (int): Number of pairs.
        same_label (bool): Draw intra-class pairs if set, inter-class pairs otherwise.
        max_retries (int): Number of rejection rounds.

    Raises:
        DataError: Not enough pairs found within the retry budget.

    Returns:
        np.ndarray: Pairs (u < v) ([count, 2]).
    """

    n = len(labels)
    codes: List[np.ndarray] = []
    n_found = 0
    for _ in range(max_retries):
        if n_found >= count:
            break
        batch = torch.randint(0, n, (max(4 * (count - n_found), 64), 2), generator=rng).numpy()
        u, v = batch.min(axis=1), batch.max(axis=1)
        keep = (u != v) & ((labels[u] == labels[v]) == same_label)
        codes.append(u[keep] * n + v[keep])
        merged = np.concatenate(codes)
        _, first = np.unique(merged, return_index=True)
        codes = [merged[np.sort(first)]]
        n_found = len(codes[0])
    if n_found < count:
        raise DataError(f"infeasible planted graph: found {n_found}/{count} pairs after {max_retries} retries")
    chosen = codes[0][:count]
    return np.stack((chosen // n, chosen % n), axis=1)


def planted_homophily_graph(
    n: int,
    c: int,
    target_h: float,
    avg_degree: float,
    seed: int,
    max_retries: int = 100,
) -> Graph:
    """
    Synthetic labeled graph with a planted homophily ratio.
    Labels are assigned round-robin; round(target_h * |E|) edges are drawn within classes
    and the rest across classes. Features are one-hot labels plus uniform noise in [-0.01, 0.01].

    Args:
        n (int): Number of nodes (>= 2c).
        c (int): Number of classes.
        target_h (float): Target homophily ratio in [0, 1].
        avg_degree (float): Average degree.
        seed (int): RNG seed.
        max_retries (int, optional): Rejection rounds per edge type. Defaults to 100.

    Raises:
        DataError: Invalid arguments or infeasible target.

    Returns:
        Graph: Planted graph.
    """

    if not 0.0 <= target_h <= 1.0:
        raise DataError(f"target homophily must lie in [0, 1], got {target_h}")
    if c < 1 or n < 2 * c:
        raise DataError(f"planted graph requires n >= 2c, got n={n}, c={c}")
    labels = np.arange(n, dtype=np.int64) % c
    n_edges = int(round(avg_degree * n / 2))
    if n_edges < 1:
        raise DataError("planted graph requires at least one edge")
    n_intra = int(round(target_h * n_edges))
    n_inter = n_edges - n_intra

    class_sizes = np.bincount(labels, minlength=c)
    intra_capacity = int(np.sum(class_sizes * (class_sizes - 1) // 2))
    inter_capacity = n * (n - 1) // 2 - intra_capacity
    if n_intra > intra_capacity or n_inter > inter_capacity:
        raise DataError(
            f"infeasible planted graph: needs {n_intra} intra / {n_inter} inter edges, "
            f"capacity {intra_capacity} / {inter_capacity}"
        )

    rng = torch.Generator().manual_seed(seed)
    intra = _draw_pairs(rng, labels, n_intra, True, max_retries) if n_intra else np.zeros((0, 2), int)
    inter = _draw_pairs(rng, labels, n_inter, False, max_retries) if n_inter else np.zeros((0, 2), int)
    noise = (torch.rand((n, c), generator=rng, dtype=torch.float64) * 0.02 - 0.01).numpy()
    features = np.eye(c)[labels] + noise

    graph = Graph.from_edges(n, np.concatenate((intra, inter)), features, labels, c)
    logger.debug(f"Planted graph: n={n}, c={c}, |E|={graph.num_edges}, h={n_intra / n_edges:.4f}")
    return graph
