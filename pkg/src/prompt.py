"""
Conditional prompting of a frozen encoder: similarity-weighted ego readouts, the condition-net
that turns readouts into node-specific prompts, element-wise prompting, prototypes and the
prototype loss used for downstream adaptation.
"""

import logging
from dataclasses import dataclass
from functools import partial
from typing import List, NamedTuple, Optional, Sequence, Tuple

import jax
import jax.numpy as jnp
import numpy as np
import scipy.sparse as sp

from errors import ConfigError, DataError, NumericError
from graph import EgoNetwork, FewShotTask, Graph, GraphCollection, batch_graphs, ego_membership
from model import GcnEncoder, encode
from numerics import (
    DEFAULT_SEED,
    Matrix,
    Mlp,
    Param,
    as_matrix,
    cosine_matrix,
    cosine_rows,
    init_mlp,
    mlp_apply,
    mlp_forward,
)

logger = logging.getLogger(__name__)

VARIANTS = ("pronog", "no_prompt", "single_prompt", "node_cond", "no_sim")
CONDITIONED_VARIANTS = ("pronog", "node_cond", "no_sim")
MAX_CONDITION_HIDDEN = 64


@dataclass(eq=False)
class ConditionNet:
    """Bottleneck MLP d -> m -> d generating one prompt per node from its readout."""

    mlp: Mlp
    task_id: str = "task"

    def __post_init__(self) -> None:
        if self.mlp.in_dim != self.mlp.out_dim:
            raise ConfigError("condition-net output dim must equal its input (embedding) dim")
        if not (self.mlp.hidden_dim < self.mlp.in_dim or self.mlp.hidden_dim <= MAX_CONDITION_HIDDEN):
            raise ConfigError(
                f"condition-net hidden dim {self.mlp.hidden_dim} is neither below d={self.mlp.in_dim} "
                f"nor <= {MAX_CONDITION_HIDDEN}"
            )

    @property
    def params(self) -> List[Param]:
        return self.mlp.params

    @property
    def dim(self) -> int:
        return self.mlp.in_dim

    @property
    def hidden_dim(self) -> int:
        return self.mlp.hidden_dim


def init_condition_net(
    dim: int, hidden: int = 64, seed: int = DEFAULT_SEED, task_id: str = "task"
) -> ConditionNet:
    """
    Initializes a condition-net with sigmoid hidden and output activations.

    Args:
        dim (int): Embedding dim d.
        hidden (int, optional): Bottleneck dim m. Defaults to 64.
        seed (int, optional): RNG seed. Defaults to 39.
        task_id (str, optional): Task tag. Defaults to "task".

    Returns:
        ConditionNet: Condition-net.
    """

    return ConditionNet(init_mlp(dim, hidden, dim, "sigmoid", "sigmoid", seed), task_id)


@dataclass(eq=False)
class PromptHead:
    """Tunable part of an adaptation variant; `params` is what the optimizer sees."""

    variant: str
    dim: int
    condition_net: Optional[ConditionNet] = None
    prompt: Optional[Param] = None  # [1, d], single_prompt only

    @property
    def params(self) -> List[Param]:
        if self.condition_net is not None:
            return self.condition_net.params
        if self.prompt is not None:
            return [self.prompt]
        return []

    @property
    def activation(self) -> str:
        return self.condition_net.mlp.activation if self.condition_net else "sigmoid"

    @property
    def output_activation(self) -> str:
        return self.condition_net.mlp.output_activation if self.condition_net else "sigmoid"


def get_prompt_head(
    variant: str, dim: int, hidden: int = 64, seed: int = DEFAULT_SEED, task_id: str = "task"
) -> PromptHead:
    """
    Returns prompt head specified by config.

    Args:
        variant (str): pronog, no_prompt, single_prompt, node_cond or no_sim.
        dim (int): Embedding dim.
        hidden (int, optional): Condition-net hidden dim. Defaults to 64.
        seed (int, optional): RNG seed. Defaults to 39.
        task_id (str, optional): Task tag. Defaults to "task".

    Raises:
        ConfigError: Unsupported variant.

    Returns:
        PromptHead: Freshly initialized head.
    """

    if variant in CONDITIONED_VARIANTS:
        return PromptHead(variant, dim, condition_net=init_condition_net(dim, hidden, seed, task_id))
    elif variant == "single_prompt":
        return PromptHead(variant, dim, prompt=Param.create(jnp.ones((1, dim))))
    elif variant == "no_prompt":
        return PromptHead(variant, dim)
    else:
        raise ConfigError(f"Unsupported variant: {variant}")


@dataclass
class PromptState:
    """Readouts, prompts and prompted embeddings of all nodes ([N, d] each)."""

    readouts: Matrix
    prompts: Matrix
    prompted: Matrix

    def __post_init__(self) -> None:
        if not self.readouts.shape == self.prompts.shape == self.prompted.shape:
            raise NumericError("readouts, prompts and prompted embeddings must share their shape")


@dataclass
class Prototypes:
    """One prototype row per class, classes ascending."""

    vectors: Matrix  # [C, d]
    classes: Tuple[int, ...]

    def __post_init__(self) -> None:
        if self.vectors.shape[0] != len(self.classes):
            raise DataError("one prototype per class required")


class Membership(NamedTuple):
    """Ego membership in coordinate form with CSR row order."""

    rows: jax.Array  # [Z]
    cols: jax.Array  # [Z]
    counts: jax.Array  # [N]

    @classmethod
    def from_csr(cls, membership: sp.csr_matrix) -> "Membership":
        membership = membership.tocsr()
        membership.sort_indices()
        counts = np.diff(membership.indptr)
        return cls(
            jnp.asarray(np.repeat(np.arange(membership.shape[0]), counts), dtype=jnp.int64),
            jnp.asarray(membership.indices, dtype=jnp.int64),
            jnp.asarray(counts, dtype=jnp.float64),
        )


def subgraph_readout(emb, ego: EgoNetwork, v: int) -> Matrix:
    """
    Similarity-weighted mean readout s_v = 1/|S_v| sum_u h_u cos(h_u, h_v) over the ego-network,
    v included. Weights are raw cosines and may be negative.

    Args:
        emb: Node embeddings ([N, d]).
        ego (EgoNetwork): Ego-network centered at v.
        v (int): Center node.

    Raises:
        DataError: Ego-network not centered at v.

    Returns:
        Matrix: Readout vector ([d]).
    """

    if ego.center != v:
        raise DataError(f"ego-network centered at {ego.center}, not {v}")
    emb = as_matrix(emb, "embeddings")
    rows = emb[ego.members]  # [M, d]
    weights = cosine_rows(rows, emb[v][None, :])  # [M]
    return jnp.mean(rows * weights[:, None], axis=0)


@partial(jax.jit, static_argnames=("weighted",))
def _readout_apply(emb, rows, cols, counts, weighted):
    members = emb[cols]  # [Z, d]
    if weighted:
        members = members * cosine_rows(members, emb[rows])[:, None]
    sums = jax.ops.segment_sum(members, rows, num_segments=emb.shape[0], indices_are_sorted=True)
    return sums / counts[:, None]


def readout_all(emb, membership: sp.csr_matrix | Membership, weighted: bool = True) -> Matrix:
    """
    Readouts of all nodes at once; the unweighted form is the plain mean over S_v.

    Args:
        emb: Node embeddings ([N, d]).
        membership (sp.csr_matrix | Membership): δ-hop membership ([N, N]).
        weighted (bool, optional): Cosine-weighted readout. Defaults to True.

    Returns:
        Matrix: Readouts ([N, d]).
    """

    emb = as_matrix(emb, "embeddings")
    if isinstance(membership, sp.spmatrix):
        membership = Membership.from_csr(membership)
    if membership.counts.shape[0] != emb.shape[0]:
        raise NumericError("membership and embeddings disagree on the node count")
    return _readout_apply(emb, membership.rows, membership.cols, membership.counts, weighted)


def generate_prompt(cn: ConditionNet, s_v) -> Matrix:
    """
    Prompt p = CondNet(s_v); accepts one readout vector ([d]) or a batch ([N, d]).

    Raises:
        NumericError: Dimension mismatch.
    """

    s_v = jnp.asarray(s_v, dtype=jnp.float64)
    prompt = mlp_forward(cn.mlp, s_v)
    return prompt[0] if s_v.ndim == 1 else prompt


def apply_prompt(p, h) -> Matrix:
    """
    Element-wise prompting h~ = p * h.

    Raises:
        NumericError: Shape mismatch.
    """

    p = jnp.asarray(p, dtype=jnp.float64)
    h = jnp.asarray(h, dtype=jnp.float64)
    if p.shape != h.shape:
        raise NumericError(f"apply_prompt: shape mismatch {p.shape} vs {h.shape}")
    return p * h


def graph_embedding(prompted) -> Matrix:
    """
    Graph readout: mean of the prompted node embeddings.

    Raises:
        DataError: Empty graph.
    """

    prompted = jnp.asarray(prompted, dtype=jnp.float64)
    if prompted.ndim != 2 or prompted.shape[0] == 0:
        raise DataError("graph embedding of an empty graph")
    return jnp.mean(prompted, axis=0)


def prototype_matrix(support_emb: jax.Array, support_pos: jax.Array, num_classes: int) -> jax.Array:
    """
    Per-class means of support embeddings.
    S: Number of support instances.
    C: Number of classes.

    Args:
        support_emb (jax.Array): Support embeddings ([S, d]).
        support_pos (jax.Array): Class position per support instance ([S]).
        num_classes (int): Number of classes (C).

    Returns:
        jax.Array: Prototypes ([C, d]).
    """

    sums = jax.ops.segment_sum(support_emb, support_pos, num_segments=num_classes)
    counts = jax.ops.segment_sum(jnp.ones(support_emb.shape[0]), support_pos, num_segments=num_classes)
    return sums / jnp.maximum(counts, 1.0)[:, None]


def class_prototypes(support: Sequence[Tuple[object, int]], classes: Sequence[int]) -> Prototypes:
    """
    Prototypes as arithmetic means of the support embeddings of each class.

    Args:
        support (Sequence[Tuple[object, int]]): (embedding, class) pairs.
        classes (Sequence[int]): Class set.

    Raises:
        DataError: A class without support instances, or a support class outside the set.

    Returns:
        Prototypes: Prototypes over the sorted class set.
    """

    classes = tuple(sorted(int(c) for c in classes))
    labels = np.array([int(c) for _, c in support], dtype=np.int64)
    if not set(labels) <= set(classes):
        raise DataError(f"support classes {sorted(set(labels) - set(classes))} outside the class set")
    missing = [c for c in classes if c not in set(labels)]
    if missing:
        raise DataError(f"class(es) {missing} have no support instances")
    emb = jnp.stack([jnp.ravel(jnp.asarray(vector, dtype=jnp.float64)) for vector, _ in support])
    pos = jnp.asarray(np.searchsorted(classes, labels))
    return Prototypes(prototype_matrix(emb, pos, len(classes)), classes)


def prototype_loss(query_emb: jax.Array, query_pos: jax.Array, protos: jax.Array, tau: float) -> jax.Array:
    """
    Summed cross-entropy of the softmax over cos(h~_i, h_c) / tau.
    Q: Number of queries.

    Args:
        query_emb (jax.Array): Query embeddings ([Q, d]).
        query_pos (jax.Array): Correct class position per query ([Q]).
        protos (jax.Array): Prototypes ([C, d]).
        tau (float): Temperature.

    Returns:
        jax.Array: Loss ([1]).
    """

    logits = cosine_matrix(query_emb, protos) / tau  # [Q, C]
    log_probs = jax.nn.log_softmax(logits, axis=1)
    return -jnp.sum(jnp.take_along_axis(log_probs, query_pos[:, None], axis=1))


def downstream_loss(query: Sequence[Tuple[object, int]], protos: Prototypes, tau: float = 0.5) -> float:
    """
    Prototype loss over (embedding, class) pairs.

    Raises:
        ConfigError: Non-positive temperature.
        DataError: Query class outside the prototype classes.
    """

    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    labels = [int(c) for _, c in query]
    if not set(labels) <= set(protos.classes):
        raise DataError("query class outside the prototype classes")
    emb = jnp.stack([jnp.ravel(jnp.asarray(vector, dtype=jnp.float64)) for vector, _ in query])
    pos = jnp.asarray(np.searchsorted(protos.classes, labels))
    return float(prototype_loss(emb, pos, protos.vectors, tau))


def predict(h, protos: Prototypes) -> int:
    """Class of the highest-cosine prototype; ties go to the smallest class."""

    cos = np.asarray(cosine_matrix(jnp.atleast_2d(jnp.asarray(h, dtype=jnp.float64)), protos.vectors))[0]
    return protos.classes[int(np.argmax(cos))]


def predict_batch(query_emb, protos: Prototypes) -> np.ndarray:
    """Vectorized `predict` ([Q, d] -> [Q])."""

    cos = np.asarray(cosine_matrix(jnp.asarray(query_emb, dtype=jnp.float64), protos.vectors))
    return np.asarray(protos.classes, dtype=np.int64)[np.argmax(cos, axis=1)]


@dataclass(eq=False)
class PromptContext:
    """
    Frozen-encoder quantities computed once per dataset: node embeddings, condition-net inputs
    and, for graph tasks, the graph index of every node.
    N: Number of nodes (of the disjoint union for graph tasks).
    """

    embeddings: Matrix  # [N, d]
    condition: Optional[Matrix]  # [N, d]
    segments: Optional[jax.Array]  # [N]
    num_instances: int
    instance_kind: str
    variant: str


def prepare_context(
    enc: GcnEncoder, source: Graph | GraphCollection, delta: int = 2, variant: str = "pronog"
) -> PromptContext:
    """
    Encodes the dataset once and derives the condition inputs of a variant.

    Args:
        enc (GcnEncoder): Frozen encoder.
        source (Graph | GraphCollection): Graph (node tasks) or collection (graph tasks).
        delta (int, optional): Readout radius. Defaults to 2.
        variant (str, optional): Adaptation variant. Defaults to "pronog".

    Raises:
        ConfigError: Unsupported variant.

    Returns:
        PromptContext: Context.
    """

    if variant not in VARIANTS:
        raise ConfigError(f"Unsupported variant: {variant}")
    if isinstance(source, GraphCollection):
        graph, graph_index = batch_graphs(source.graphs)
        segments, num_instances, instance_kind = jnp.asarray(graph_index), len(source), "graph"
    else:
        graph, segments, num_instances, instance_kind = source, None, source.num_nodes, "node"

    emb = encode(enc, graph)
    if variant in ("pronog", "no_sim"):
        condition = readout_all(emb, ego_membership(graph, delta), weighted=variant == "pronog")
    elif variant == "node_cond":
        condition = emb
    else:
        condition = None
    return PromptContext(emb, condition, segments, num_instances, instance_kind, variant)


def _prompt_rows(values, emb, condition, variant, activation, output_activation):
    if variant == "no_prompt":
        return emb
    if variant == "single_prompt":
        return values[0] * emb
    return mlp_apply(values, condition, activation, output_activation) * emb


def instance_embeddings(
    values: Sequence[jax.Array],
    emb: jax.Array,
    condition: Optional[jax.Array],
    segments: Optional[jax.Array],
    ids: jax.Array,
    variant: str,
    activation: str,
    output_activation: str,
    num_instances: int,
) -> jax.Array:
    """
    Prompted embeddings of the requested instances: nodes, or mean-pooled graphs.
    I: Number of requested instances.

    Args:
        values (Sequence[jax.Array]): Prompt head parameter values.
        emb (jax.Array): Frozen node embeddings ([N, d]).
        condition (Optional[jax.Array]): Condition-net inputs ([N, d]).
        segments (Optional[jax.Array]): Graph index per node ([N]); None for node tasks.
        ids (jax.Array): Instance ids ([I]).
        variant (str): Adaptation variant.
        activation (str): Condition-net hidden activation.
        output_activation (str): Condition-net output activation.
        num_instances (int): Number of graphs for graph tasks.

    Returns:
        jax.Array: Instance embeddings ([I, d]).
    """

    if segments is None:
        cond = None if condition is None else condition[ids]
        return _prompt_rows(values, emb[ids], cond, variant, activation, output_activation)
    prompted = _prompt_rows(values, emb, condition, variant, activation, output_activation)
    sums = jax.ops.segment_sum(prompted, segments, num_segments=num_instances)
    counts = jax.ops.segment_sum(jnp.ones(emb.shape[0]), segments, num_segments=num_instances)
    return (sums / jnp.maximum(counts, 1.0)[:, None])[ids]


def support_objective(
    values: Sequence[jax.Array],
    emb: jax.Array,
    condition: Optional[jax.Array],
    segments: Optional[jax.Array],
    support_ids: jax.Array,
    support_pos: jax.Array,
    tau: float,
    variant: str,
    activation: str,
    output_activation: str,
    num_instances: int,
    num_classes: int,
) -> jax.Array:
    """Prototype loss of the support set against its own prompted prototypes."""

    support_emb = instance_embeddings(
        values, emb, condition, segments, support_ids, variant, activation, output_activation, num_instances
    )
    protos = prototype_matrix(support_emb, support_pos, num_classes)
    return prototype_loss(support_emb, support_pos, protos, tau)


def task_prototypes(head: PromptHead, context: PromptContext, task: FewShotTask) -> Prototypes:
    """Prototypes of a task's prompted support instances under the current head parameters."""

    classes = tuple(sorted(task.classes))
    support_emb = task_embeddings(head, context, task.support_ids)
    pos = jnp.asarray(np.searchsorted(classes, task.support_labels))
    return Prototypes(prototype_matrix(support_emb, pos, len(classes)), classes)


def task_embeddings(head: PromptHead, context: PromptContext, ids: np.ndarray) -> Matrix:
    """Prompted instance embeddings under the current head parameters."""

    return instance_embeddings(
        [p.value for p in head.params],
        context.embeddings,
        context.condition,
        context.segments,
        jnp.asarray(ids, dtype=jnp.int64),
        head.variant,
        head.activation,
        head.output_activation,
        context.num_instances,
    )


def prompt_state(head: PromptHead, context: PromptContext) -> PromptState:
    """Readouts, prompts and prompted node embeddings of every node under the current head."""

    emb = context.embeddings
    readouts = context.condition if context.condition is not None else emb
    if head.condition_net is not None:
        prompts = mlp_forward(head.condition_net.mlp, readouts)
    elif head.prompt is not None:
        prompts = jnp.broadcast_to(head.prompt.value, emb.shape)
    else:
        prompts = jnp.ones_like(emb)
    return PromptState(readouts, prompts, apply_prompt(prompts, emb))
