"""
Standardized contrastive pre-training: task containers, similarity kernels, the
standardized loss, homophily task/sample classification and the link-prediction,
GraphCL and DGI task constructors.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import jax
import jax.numpy as jnp
import numpy as np
import torch

from errors import ConfigError, DataError, InvalidTripletError, KernelError
from graph import Graph, GraphCollection, batch_graphs, ego_network, induced_subgraph
from numerics import DEFAULT_SEED, as_matrix, cosine_rows, cosine_similarity

logger = logging.getLogger(__name__)

HOMOPHILY = "homophily"
NON_HOMOPHILY = "non-homophily"
PRETRAIN_TASKS = ("link_prediction", "graphcl", "dgi")


@dataclass(frozen=True, eq=False)
class ContrastiveTask:
    """
    Anchors with positive and negative instance handles.

    Handles index a table made of the node embeddings of `graph` followed by one pooled
    (mean) row per segment. Handles below `source_rows` are nodes of the source graph.
    U: Number of anchors.
    P: Max positives per anchor.
    Q: Max negatives per anchor.
    """

    graph: Graph
    anchors: np.ndarray  # [U]
    positives: np.ndarray  # [U, P]
    positive_mask: np.ndarray  # [U, P]
    negatives: np.ndarray  # [U, Q]
    negative_mask: np.ndarray  # [U, Q]
    source_rows: int
    segments: Optional[np.ndarray] = None  # [N], segment id per node
    num_segments: int = 0
    name: str = "custom"

    def __post_init__(self) -> None:
        if self.positives.shape != self.positive_mask.shape:
            raise DataError("positive mask must match positives")
        if self.negatives.shape != self.negative_mask.shape:
            raise DataError("negative mask must match negatives")
        if len(self.anchors) != len(self.positives) or len(self.anchors) != len(self.negatives):
            raise DataError("one positive and one negative row per anchor required")
        if len(self.anchors) == 0:
            raise DataError("contrastive task without anchors")
        if not (self.positive_mask.any(axis=1).all() and self.negative_mask.any(axis=1).all()):
            raise DataError("every anchor needs at least one positive and one negative")
        if self.num_segments and (self.segments is None or len(self.segments) != self.graph.num_nodes):
            raise DataError("segments must assign every node")
        handles = np.concatenate(
            (self.anchors, self.positives[self.positive_mask], self.negatives[self.negative_mask])
        )
        if handles.min() < 0 or handles.max() >= self.num_handles:
            raise DataError("unresolvable instance handle")

    @property
    def num_handles(self) -> int:
        return self.graph.num_nodes + self.num_segments

    def positive_sets(self) -> List[np.ndarray]:
        return [row[mask] for row, mask in zip(self.positives, self.positive_mask)]

    def negative_sets(self) -> List[np.ndarray]:
        return [row[mask] for row, mask in zip(self.negatives, self.negative_mask)]

    def with_sample(self, u: int, a: int, b: int) -> "ContrastiveTask":
        """Returns a copy with one more anchor entry (u, {a}, {b})."""

        def append(values: np.ndarray, mask: np.ndarray, handle: int) -> Tuple[np.ndarray, np.ndarray]:
            row = np.zeros((1, values.shape[1]), dtype=np.int64)
            row_mask = np.zeros((1, values.shape[1]), dtype=bool)
            row[0, 0], row_mask[0, 0] = handle, True
            return np.concatenate((values, row)), np.concatenate((mask, row_mask))

        positives, positive_mask = append(self.positives, self.positive_mask, a)
        negatives, negative_mask = append(self.negatives, self.negative_mask, b)
        return ContrastiveTask(
            self.graph,
            np.append(self.anchors, u),
            positives,
            positive_mask,
            negatives,
            negative_mask,
            self.source_rows,
            self.segments,
            self.num_segments,
            self.name,
        )

    def arrays(self) -> Tuple[jax.Array, ...]:
        """Device arrays (segments, anchors, positives, positive_mask, negatives, negative_mask)."""

        segments = self.segments if self.segments is not None else np.zeros(self.graph.num_nodes)
        return (
            jnp.asarray(segments, dtype=jnp.int64),
            jnp.asarray(self.anchors, dtype=jnp.int64),
            jnp.asarray(self.positives, dtype=jnp.int64),
            jnp.asarray(self.positive_mask),
            jnp.asarray(self.negatives, dtype=jnp.int64),
            jnp.asarray(self.negative_mask),
        )


@dataclass(frozen=True)
class SimilarityKernel:
    """Similarity applied to cosine values: raw cosine or exp(cos / tau)."""

    kind: str = "exp"
    tau: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in ("raw", "exp"):
            raise ConfigError(f"Unsupported similarity kernel: {self.kind}")
        if not self.tau > 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")

    def __call__(self, cos: jax.Array) -> jax.Array:
        if self.kind == "raw":
            return cos
        return jnp.exp(cos / self.tau)


def handle_table(emb: jax.Array, segments: jax.Array, num_segments: int) -> jax.Array:
    """
    Node embeddings followed by the segment-mean pooled rows.
    N: Number of nodes.
    S: Number of segments.

    Args:
        emb (jax.Array): Node embeddings ([N, D]).
        segments (jax.Array): Segment id per node ([N]).
        num_segments (int): Number of segments (S).

    Returns:
        jax.Array: Handle table ([N+S, D]).
    """

    if num_segments == 0:
        return emb
    sums = jax.ops.segment_sum(emb, segments, num_segments=num_segments)  # [S, D]
    counts = jax.ops.segment_sum(jnp.ones(emb.shape[0]), segments, num_segments=num_segments)  # [S]
    return jnp.concatenate((emb, sums / jnp.maximum(counts, 1.0)[:, None]), axis=0)


def contrastive_log_probs(
    table: jax.Array,
    anchors: jax.Array,
    positives: jax.Array,
    positive_mask: jax.Array,
    negatives: jax.Array,
    negative_mask: jax.Array,
    tau: float,
) -> jax.Array:
    """
    ln P(u, A_u, B_u) per anchor under the exp-cosine kernel, computed in log space.
    U: Number of anchors.

    Returns:
        jax.Array: Log-probabilities ([U]).
    """

    anchor_rows = table[anchors][:, None, :]  # [U, 1, D]
    logits_pos = jnp.where(positive_mask, cosine_rows(anchor_rows, table[positives]) / tau, -jnp.inf)
    logits_neg = jnp.where(negative_mask, cosine_rows(anchor_rows, table[negatives]) / tau, -jnp.inf)
    log_pos = jax.nn.logsumexp(logits_pos, axis=1)  # [U]
    log_all = jax.nn.logsumexp(jnp.concatenate((logits_pos, logits_neg), axis=1), axis=1)  # [U]
    return log_pos - log_all


def standardized_contrastive_loss(
    emb, task: ContrastiveTask, kernel: SimilarityKernel = SimilarityKernel()
) -> Tuple[float, np.ndarray]:
    """
    Standardized contrastive loss L_T = -sum_u ln P(u, A_u, B_u), where P is the kernel mass of
    the positives over the kernel mass of positives and negatives.

    Args:
        emb: Node embeddings of `task.graph` ([N, D]).
        task (ContrastiveTask): Contrastive task.
        kernel (SimilarityKernel, optional): Similarity kernel. Defaults to exp-cosine, tau 0.5.

    Raises:
        KernelError: Raw-cosine kernel; P may be non-positive.
        DataError: Embedding rows do not match the task graph.

    Returns:
        Tuple[float, np.ndarray]:
            loss,
            per-anchor P ([U]).
    """

    if kernel.kind != "exp":
        raise KernelError("standardized loss requires a strictly positive kernel (exp-cosine)")
    emb = as_matrix(emb, "embeddings")
    if emb.shape[0] != task.graph.num_nodes:
        raise DataError(f"embeddings have {emb.shape[0]} rows, task graph has {task.graph.num_nodes} nodes")
    segments, *handles = task.arrays()
    log_p = contrastive_log_probs(
        handle_table(emb, segments, task.num_segments), *handles, kernel.tau
    )
    return float(-jnp.sum(log_p)), np.exp(np.asarray(log_p))


def classify_sample(u: int, a: int, b: int, emb, g: Graph) -> str:
    """
    Classifies a triplet as homophily sample iff cos(h_u, h_a) > cos(h_u, h_b).

    Args:
        u (int): Anchor node.
        a (int): Linked node.
        b (int): Non-linked node.
        emb: Node embeddings ([N, D]).
        g (Graph): Source graph.

    Raises:
        InvalidTripletError: (u, a) not an edge, or (u, b) an edge, or b == u.

    Returns:
        str: "homophily" or "non-homophily"; ties are non-homophily.
    """

    if not g.has_edge(u, a):
        raise InvalidTripletError(f"({u}, {a}) is not an edge")
    if b == u or g.has_edge(u, b):
        raise InvalidTripletError(f"({u}, {b}) must be a non-edge")
    emb = np.asarray(emb, dtype=np.float64)
    if cosine_similarity(emb[u], emb[a]) > cosine_similarity(emb[u], emb[b]):
        return HOMOPHILY
    return NON_HOMOPHILY


def is_homophily_task(task: ContrastiveTask, g: Graph) -> bool:
    """
    Checks whether every positive is linked and every negative is not linked to its anchor.

    Args:
        task (ContrastiveTask): Task.
        g (Graph): Source graph.

    Returns:
        bool: False as soon as a handle is not a node of g or an edge condition fails.
    """

    limit = min(task.source_rows, g.num_nodes)
    for u, pos, neg in zip(task.anchors, task.positive_sets(), task.negative_sets()):
        if u >= limit or np.any(pos >= limit) or np.any(neg >= limit):
            return False
        if not all(g.has_edge(int(u), int(a)) for a in pos):
            return False
        if any(b == u or g.has_edge(int(u), int(b)) for b in neg):
            return False
    return True


def build_link_prediction_task(
    g: Graph, negatives_per_anchor: int = 1, seed: int = DEFAULT_SEED
) -> ContrastiveTask:
    """
    Link prediction: per non-isolated anchor, one uniformly drawn neighbor as positive and
    uniformly drawn non-neighbors (without replacement) as negatives.

    Args:
        g (Graph): Graph.
        negatives_per_anchor (int, optional): Negatives per anchor. Defaults to 1.
        seed (int, optional): RNG seed. Defaults to 39.

    Raises:
        DataError: No edges, or an anchor with fewer non-neighbors than requested negatives.

    Returns:
        ContrastiveTask: Homophily task over the nodes of g.
    """

    if negatives_per_anchor < 1:
        raise ConfigError(f"negatives_per_anchor must be >= 1, got {negatives_per_anchor}")
    anchors = np.flatnonzero(g.degrees() > 0)
    if len(anchors) == 0:
        raise DataError("link prediction requires at least one edge")
    rng = torch.Generator().manual_seed(seed)
    positives = np.zeros((len(anchors), 1), dtype=np.int64)
    negatives = np.zeros((len(anchors), negatives_per_anchor), dtype=np.int64)
    all_nodes = np.arange(g.num_nodes)
    for row, u in enumerate(anchors):
        neighbors = g.neighbors(u)
        positives[row, 0] = neighbors[int(torch.randint(len(neighbors), (1,), generator=rng))]
        candidates = np.setdiff1d(all_nodes, np.append(neighbors, u), assume_unique=True)
        if len(candidates) < negatives_per_anchor:
            raise DataError(
                f"anchor {u} has {len(candidates)} non-neighbors, needs {negatives_per_anchor}"
            )
        perm = torch.randperm(len(candidates), generator=rng).numpy()
        negatives[row] = candidates[perm[:negatives_per_anchor]]
    return ContrastiveTask(
        g,
        anchors.astype(np.int64),
        positives,
        np.ones_like(positives, dtype=bool),
        negatives,
        np.ones_like(negatives, dtype=bool),
        source_rows=g.num_nodes,
        name="link_prediction",
    )


def drop_grouped_edges(
    edges: np.ndarray, groups: np.ndarray, num_groups: int, ratio: float, generator: torch.Generator
) -> np.ndarray:
    """
    Drops floor(ratio * |E_g|) uniformly chosen edges from every group g; kept edges stay in order.
    E: Number of edges.

    Args:
        edges (np.ndarray): Undirected edges ([E, 2]).
        groups (np.ndarray): Group id per edge ([E]).
        num_groups (int): Number of groups.
        ratio (float): Drop ratio in [0, 1).
        generator (torch.Generator): RNG.

    Raises:
        ConfigError: Ratio outside [0, 1).

    Returns:
        np.ndarray: Kept edges ([E', 2]).
    """

    if not 0 <= ratio < 1:
        raise ConfigError(f"edge drop ratio must be in [0, 1), got {ratio}")
    n_drop = np.floor(ratio * np.bincount(groups, minlength=num_groups)).astype(np.int64)  # [G]
    keys = torch.rand(len(edges), generator=generator, dtype=torch.float64).numpy()  # [E]
    order = np.lexsort((keys, groups))
    sorted_groups = groups[order]
    rank = np.arange(len(order)) - np.searchsorted(sorted_groups, sorted_groups)
    return edges[np.sort(order[rank >= n_drop[sorted_groups]])]


def augment_edge_drop(g: Graph, ratio: float, seed: int = DEFAULT_SEED) -> Graph:
    """
    Drops floor(ratio * |E|) uniformly chosen undirected edges.

    Args:
        g (Graph): Graph.
        ratio (float): Drop ratio in [0, 1).
        seed (int, optional): RNG seed. Defaults to 39.

    Raises:
        ConfigError: Ratio outside [0, 1).

    Returns:
        Graph: Augmented graph with unchanged features and labels.
    """

    edges = g.edge_list()
    kept = drop_grouped_edges(
        edges, np.zeros(len(edges), dtype=np.int64), 1, ratio, torch.Generator().manual_seed(seed)
    )
    if len(kept) == len(edges):
        return g
    return Graph.from_edges(g.num_nodes, kept, g.features, g.labels, g.num_classes)


def graphcl_instances(source: Graph | GraphCollection, delta: int = 2) -> List[Graph]:
    """
    Contrastive instances: the graphs of a collection, or the δ-hop ego subgraph of every node.

    Args:
        source (Graph | GraphCollection): Single graph or collection.
        delta (int, optional): Ego radius for single graphs. Defaults to 2.

    Returns:
        List[Graph]: Instance graphs.
    """

    if isinstance(source, GraphCollection):
        return list(source.graphs)
    return [
        induced_subgraph(source, ego_network(source, v, delta).members)
        for v in range(source.num_nodes)
    ]


def build_graphcl_task(
    source: Graph | GraphCollection,
    ratio: float = 0.2,
    seed: int = DEFAULT_SEED,
    delta: int = 2,
    instances: Optional[Sequence[Graph]] = None,
) -> ContrastiveTask:
    """
    GraphCL with edge dropping: two augmented views per instance, batched as one disjoint union.
    Each view drops floor(ratio * |E_i|) edges of instance i. The anchor is the pooled first
    view, the positive its pooled second view, the negatives the pooled second views of all
    other instances.

    Args:
        source (Graph | GraphCollection): Single graph (ego-subgraph instances) or collection.
        ratio (float, optional): Edge drop ratio. Defaults to 0.2.
        seed (int, optional): RNG seed. Defaults to 39.
        delta (int, optional): Ego radius for single graphs. Defaults to 2.
        instances (Optional[Sequence[Graph]], optional): Precomputed instances. Defaults to None.

    Raises:
        DataError: Fewer than two instances.
        ConfigError: Ratio outside [0, 1).

    Returns:
        ContrastiveTask: Non-homophily task over pooled view handles.
    """

    instances = list(instances) if instances is not None else graphcl_instances(source, delta)
    n_inst = len(instances)
    if n_inst < 2:
        raise DataError("GraphCL requires at least two instances for negatives")
    base, base_segments = batch_graphs(instances)
    edges = base.edge_list()
    groups = base_segments[edges[:, 0]]
    generator = torch.Generator().manual_seed(seed)
    first = drop_grouped_edges(edges, groups, n_inst, ratio, generator)
    second = drop_grouped_edges(edges, groups, n_inst, ratio, generator)

    n = base.num_nodes
    union = Graph.from_edges(
        2 * n,
        np.concatenate((first, second + n)),
        np.concatenate((base.features, base.features)),
        None if base.labels is None else np.concatenate((base.labels, base.labels)),
        base.num_classes,
    )
    segments = np.concatenate((base_segments, base_segments + n_inst))
    idx = np.arange(n_inst)
    others = np.stack([np.delete(idx, i) for i in idx])  # [U, U-1]
    return ContrastiveTask(
        union,
        2 * n + idx,
        (2 * n + n_inst + idx)[:, None],
        np.ones((n_inst, 1), dtype=bool),
        2 * n + n_inst + others,
        np.ones_like(others, dtype=bool),
        source_rows=0,
        segments=segments,
        num_segments=2 * n_inst,
        name="graphcl",
    )


def build_dgi_task(g: Graph, seed: int = DEFAULT_SEED) -> ContrastiveTask:
    """
    DGI-style task: the corrupted graph shuffles feature rows (never the identity permutation).
    The anchor is the mean summary of the true nodes, positives are the true nodes and
    negatives the corrupted nodes.

    Args:
        g (Graph): Graph with at least two nodes.
        seed (int, optional): RNG seed. Defaults to 39.

    Raises:
        DataError: Fewer than two nodes.

    Returns:
        ContrastiveTask: Non-homophily task over the union of the true and corrupted graphs.
    """

    n = g.num_nodes
    if n < 2:
        raise DataError("DGI corruption requires at least two nodes")
    rng = torch.Generator().manual_seed(seed)
    perm = torch.randperm(n, generator=rng).numpy()
    while np.array_equal(perm, np.arange(n)):
        perm = torch.randperm(n, generator=rng).numpy()
    corrupted = g.with_features(g.features[perm])
    union, segments = batch_graphs([g, corrupted])
    nodes = np.arange(n)
    return ContrastiveTask(
        union,
        np.array([2 * n]),
        nodes[None, :],
        np.ones((1, n), dtype=bool),
        (n + nodes)[None, :],
        np.ones((1, n), dtype=bool),
        source_rows=n,
        segments=segments,
        num_segments=2,
        name="dgi",
    )


def get_pretrain_task(
    task_name: str,
    source: Graph | GraphCollection,
    seed: int = DEFAULT_SEED,
    negatives: int = 1,
    edge_drop: float = 0.2,
    delta: int = 2,
    instances: Optional[Sequence[Graph]] = None,
) -> ContrastiveTask:
    """
    Returns pre-training task specified by config. Link prediction and DGI run on the disjoint
    union when given a collection.

    Raises:
        ConfigError: Unsupported pre-training task.
    """

    if task_name == "graphcl":
        return build_graphcl_task(source, edge_drop, seed, delta, instances)
    graph = batch_graphs(source.graphs)[0] if isinstance(source, GraphCollection) else source
    if task_name == "link_prediction":
        return build_link_prediction_task(graph, negatives, seed)
    elif task_name == "dgi":
        return build_dgi_task(graph, seed)
    else:
        raise ConfigError(f"Unsupported pre-training task: {task_name}")
