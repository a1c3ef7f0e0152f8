import hashlib
import logging
import weakref
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import jax
import jax.numpy as jnp
import numpy as np

from errors import ConfigError, FreezeError, NumericError
from graph import Graph
from numerics import (
    ACTIVATIONS,
    DEFAULT_SEED,
    Matrix,
    Param,
    SparseOperator,
    _spmm,
    as_matrix,
    get_activation,
    glorot_uniform,
)

logger = logging.getLogger(__name__)

ENCODER_KINDS = ("gcn", "sage")


def get_encoder(
    encoder: str,
    in_dim: int,
    hidden_dims: Sequence[int],
    activation: str = "relu",
    seed: int = DEFAULT_SEED,
) -> "GcnEncoder":
    """
    Returns encoder specified by config.

    Args:
        encoder (str): Encoder name: gcn or sage.
        in_dim (int): Input feature dim.
        hidden_dims (Sequence[int]): Layer widths.
        activation (str, optional): Activation of all but the last layer. Defaults to "relu".
        seed (int, optional): RNG seed. Defaults to 39.

    Raises:
        ConfigError: Unsupported encoder.

    Returns:
        GcnEncoder: Initialized encoder.
    """

    if encoder in ENCODER_KINDS:
        return init_encoder([in_dim, *hidden_dims], activation, seed, kind=encoder)
    else:
        raise ConfigError(f"Unsupported encoder: {encoder}")


def normalize_adjacency(g: Graph) -> SparseOperator:
    """
    Symmetric GCN normalization D^-1/2 (A + I) D^-1/2, with D the degree of A + I.

    Args:
        g (Graph): Graph.

    Returns:
        SparseOperator: Normalized operator ([N, N]) in CSR order.
    """

    n = g.num_nodes
    degrees = g.degrees().astype(np.float64) + 1.0  # [N]
    rows = np.repeat(np.arange(n), g.degrees())
    # Merge self-loops into CSR order
    rows = np.concatenate((rows, np.arange(n)))
    cols = np.concatenate((g.col_indices, np.arange(n)))
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    inv_sqrt = 1.0 / np.sqrt(degrees)
    values = inv_sqrt[rows] * inv_sqrt[cols]
    return SparseOperator(
        jnp.asarray(rows, dtype=jnp.int64),
        jnp.asarray(cols, dtype=jnp.int64),
        jnp.asarray(values, dtype=jnp.float64),
        (n, n),
    )


def mean_adjacency(g: Graph) -> SparseOperator:
    """
    Row-normalized adjacency D^-1 A without self-loops; rows of isolated nodes are empty.

    Args:
        g (Graph): Graph.

    Returns:
        SparseOperator: Neighbor-mean operator ([N, N]) in CSR order.
    """

    degrees = g.degrees()
    rows = np.repeat(np.arange(g.num_nodes), degrees)
    return SparseOperator(
        jnp.asarray(rows, dtype=jnp.int64),
        jnp.asarray(g.col_indices, dtype=jnp.int64),
        jnp.asarray(1.0 / degrees[rows], dtype=jnp.float64),
        (g.num_nodes, g.num_nodes),
    )


@dataclass(eq=False)
class GcnEncoder:
    """
    Layered message-passing encoder; the last layer is linear by default.
    gcn:  H^l = act(A_hat H^(l-1) W^l), H^0 = X.
    sage: H^l = act(D^-1 A H^(l-1) W^l + H^(l-1) R^l); `layers` alternates W^l and R^l.
    """

    layers: List[Param]
    activations: List[str]
    kind: str = "gcn"
    frozen: bool = False
    _operators: "weakref.WeakKeyDictionary[Graph, SparseOperator]" = field(
        default_factory=weakref.WeakKeyDictionary, repr=False
    )

    def __post_init__(self) -> None:
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"Unsupported encoder: {self.kind}")
        if len(self.layers) != len(self.activations) * self.weights_per_layer:
            raise ConfigError(f"{self.weights_per_layer} weight(s) and one activation per layer required")
        if self.root:
            for neighbor, root in zip(self.layers[0::2], self.layers[1::2]):
                if neighbor.shape != root.shape:
                    raise ConfigError(f"root weight {root.shape} must match neighbor weight {neighbor.shape}")
        heads = self.layers[:: self.weights_per_layer]
        for prev, nxt in zip(heads[:-1], heads[1:]):
            if prev.shape[1] != nxt.shape[0]:
                raise ConfigError(f"layer dims do not chain: {prev.shape} -> {nxt.shape}")
        for tag in self.activations:
            get_activation(tag)

    @property
    def root(self) -> bool:
        return self.kind == "sage"

    @property
    def weights_per_layer(self) -> int:
        return 2 if self.root else 1

    @property
    def params(self) -> List[Param]:
        return self.layers

    @property
    def in_dim(self) -> int | None:
        return self.layers[0].shape[0] if self.layers else None

    @property
    def out_dim(self) -> int | None:
        return self.layers[-1].shape[1] if self.layers else None

    def operator(self, g: Graph) -> SparseOperator:
        if g not in self._operators:
            self._operators[g] = mean_adjacency(g) if self.root else normalize_adjacency(g)
        return self._operators[g]


def init_encoder(
    dims: Sequence[int], activation: str = "relu", seed: int = DEFAULT_SEED, kind: str = "gcn"
) -> GcnEncoder:
    """
    Initializes an encoder with Glorot-uniform weights.

    Args:
        dims (Sequence[int]): Layer dims [d_0, d_1, ..., d_L].
        activation (str, optional): Activation of all but the last layer. Defaults to "relu".
        seed (int, optional): RNG seed. Defaults to 39.
        kind (str, optional): gcn or sage. Defaults to "gcn".

    Returns:
        GcnEncoder: Encoder with L layers.
    """

    per_layer = 2 if kind == "sage" else 1
    n_layers = len(dims) - 1
    keys = jax.random.split(jax.random.key(seed), max(n_layers * per_layer, 1))
    layers = [
        Param.create(glorot_uniform(keys[idx * per_layer + offset], dims[idx], dims[idx + 1]))
        for idx in range(n_layers)
        for offset in range(per_layer)
    ]
    activations = [activation] * (n_layers - 1) + ["linear"] * min(n_layers, 1)
    return GcnEncoder(layers, activations, kind)


def gcn_apply(
    weights: Sequence[jax.Array],
    rows: jax.Array,
    cols: jax.Array,
    values: jax.Array,
    x: jax.Array,
    activations: Tuple[str, ...],
    root: bool = False,
) -> jax.Array:
    """
    Pure encoder forward pass as a function of layer weights.
    N: Number of nodes.

    Args:
        weights (Sequence[jax.Array]): Layer weights; (W, R) pairs when `root` is set.
        rows (jax.Array): Operator rows.
        cols (jax.Array): Operator cols.
        values (jax.Array): Operator values.
        x (jax.Array): Node features ([N, D]).
        activations (Tuple[str, ...]): Activation tag per layer.
        root (bool, optional): Adds the root term H R per layer. Defaults to False.

    Returns:
        jax.Array: Node embeddings ([N, D_out]).
    """

    step = 2 if root else 1
    h = x
    for idx, tag in enumerate(activations):
        out = _spmm(rows, cols, values, h @ weights[step * idx], x.shape[0])
        if root:
            out = out + h @ weights[step * idx + 1]
        h = ACTIVATIONS[tag](out)
    return h


def encode(enc: GcnEncoder, g: Graph) -> Matrix:
    """
    Encodes all nodes of a graph.

    Args:
        enc (GcnEncoder): Encoder.
        g (Graph): Graph.

    Raises:
        NumericError: Feature dim does not match the first layer.

    Returns:
        Matrix: Node embeddings ([N, D_out]).
    """

    x = as_matrix(g.features, "features")
    if enc.layers and x.shape[1] != enc.in_dim:
        raise NumericError(f"encode: feature dim {x.shape[1]} != encoder input dim {enc.in_dim}")
    op = enc.operator(g)
    return gcn_apply(
        [p.value for p in enc.layers], op.rows, op.cols, op.values, x, tuple(enc.activations), enc.root
    )


def encode_backward(enc: GcnEncoder, g: Graph, upstream_grad) -> Matrix:
    """
    Backpropagates an upstream gradient through the encoder; accumulates layer gradients.

    Args:
        enc (GcnEncoder): Unfrozen encoder.
        g (Graph): Graph encoded before.
        upstream_grad: Gradient w.r.t. the embeddings ([N, D_out]).

    Raises:
        FreezeError: Encoder is frozen.
        NumericError: Shape mismatch or non-finite upstream values.

    Returns:
        Matrix: Gradient w.r.t. the node features ([N, D]).
    """

    if enc.frozen:
        raise FreezeError("encode_backward called on a frozen encoder")
    x = as_matrix(g.features, "features")
    upstream_grad = as_matrix(upstream_grad, "encoder upstream gradient")
    expected = (g.num_nodes, enc.out_dim if enc.layers else x.shape[1])
    if upstream_grad.shape != expected:
        raise NumericError(f"encode_backward: upstream shape {upstream_grad.shape} != {expected}")
    op = enc.operator(g)
    activations = tuple(enc.activations)

    def forward(weights, features):
        return gcn_apply(weights, op.rows, op.cols, op.values, features, activations, enc.root)

    _, vjp_fn = jax.vjp(forward, [p.value for p in enc.layers], x)
    d_weights, d_x = vjp_fn(upstream_grad)
    for param, d_weight in zip(enc.layers, d_weights):
        param.accumulate(d_weight)
    return d_x


def freeze(enc: GcnEncoder) -> GcnEncoder:
    """
    Freezes encoder parameters; later backward passes or optimizer steps raise FreezeError.

    Args:
        enc (GcnEncoder): Encoder.

    Returns:
        GcnEncoder: The same encoder, frozen.
    """

    enc.frozen = True
    for param in enc.layers:
        param.frozen = True
    logger.debug(f"Froze encoder {parameter_digest(enc)[:12]}")
    return enc


def parameter_digest(enc: GcnEncoder) -> str:
    """
    Stable SHA-256 digest of the encoder kind, all layer shapes and parameter bytes.

    Args:
        enc (GcnEncoder): Encoder.

    Returns:
        str: Hex digest.
    """

    digest = hashlib.sha256(enc.kind.encode())
    for idx, param in enumerate(enc.layers):
        tag = enc.activations[idx // enc.weights_per_layer]
        value = np.ascontiguousarray(np.asarray(param.value, dtype="<f8"))
        digest.update(f"{value.shape}:{tag};".encode())
        digest.update(value.tobytes())
    return digest.hexdigest()
