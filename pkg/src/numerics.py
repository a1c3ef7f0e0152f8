"""
Deterministic 64-bit numeric kernel: dense and sparse products, cosine similarity,
bottleneck MLPs with vector-Jacobian backward passes, the adaptive-moment update
and a central finite-difference gradient checker.
"""

import logging
from dataclasses import dataclass
from functools import partial
from typing import Callable, List, NamedTuple, Sequence, Tuple

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp
import numpy as np
import optax

from errors import FreezeError, NumericError

logger = logging.getLogger(__name__)

Matrix = jax.Array

ACTIVATIONS = {
    "linear": lambda x: x,
    "relu": jax.nn.relu,
    "sigmoid": jax.nn.sigmoid,
    "tanh": jnp.tanh,
}

DEFAULT_SEED = 39


def get_activation(tag: str) -> Callable[[jax.Array], jax.Array]:
    """
    Returns activation function for a tag.

    Args:
        tag (str): Activation tag: linear, relu, sigmoid, tanh.

    Raises:
        NumericError: Unsupported activation.

    Returns:
        Callable[[jax.Array], jax.Array]: Element-wise activation.
    """

    if tag not in ACTIVATIONS:
        raise NumericError(f"Unsupported activation: {tag}")
    return ACTIVATIONS[tag]


def as_matrix(x, name: str = "matrix") -> Matrix:
    """
    Converts input to a finite 2-D float64 array.

    Args:
        x: Array-like input; 1-D inputs become a single row.
        name (str, optional): Name used in error messages. Defaults to "matrix".

    Raises:
        NumericError: Input is not 1-D/2-D or contains NaN/Inf.

    Returns:
        Matrix: Float64 matrix.
    """

    x = jnp.asarray(x, dtype=jnp.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise NumericError(f"{name}: expected 2-D array, got shape {x.shape}")
    if not bool(jnp.all(jnp.isfinite(x))):
        raise NumericError(f"{name}: non-finite entries")
    return x


def matmul(a, b) -> Matrix:
    """
    Dense matrix product with shape and finiteness checks.

    Args:
        a: Left matrix ([R, K]).
        b: Right matrix ([K, C]).

    Raises:
        NumericError: Shape mismatch.

    Returns:
        Matrix: Product ([R, C]).
    """

    a = as_matrix(a, "matmul lhs")
    b = as_matrix(b, "matmul rhs")
    if a.shape[1] != b.shape[0]:
        raise NumericError(f"matmul: shape mismatch {a.shape} x {b.shape}")
    return a @ b


class SparseOperator(NamedTuple):
    """Sparse operator in coordinate form with CSR row order."""

    rows: jax.Array  # [Z], nondecreasing
    cols: jax.Array  # [Z]
    values: jax.Array  # [Z]
    shape: Tuple[int, int]

    @classmethod
    def from_graph(cls, graph) -> "SparseOperator":
        """
        Builds the plain adjacency operator of a graph (no self-loops, unit weights).

        Args:
            graph (Graph): Source graph.

        Returns:
            SparseOperator: Adjacency operator ([N, N]).
        """

        rows = np.repeat(np.arange(graph.num_nodes), np.diff(graph.row_offsets))
        return cls(
            jnp.asarray(rows, dtype=jnp.int64),
            jnp.asarray(graph.col_indices, dtype=jnp.int64),
            jnp.ones(len(graph.col_indices), dtype=jnp.float64),
            (graph.num_nodes, graph.num_nodes),
        )

    @classmethod
    def diagonal(cls, diag) -> "SparseOperator":
        """Builds a diagonal operator."""

        diag = jnp.asarray(diag, dtype=jnp.float64)
        idx = jnp.arange(diag.shape[0], dtype=jnp.int64)
        return cls(idx, idx, diag, (diag.shape[0], diag.shape[0]))

    def to_dense(self) -> Matrix:
        """Materializes the operator as a dense matrix."""

        dense = jnp.zeros(self.shape, dtype=jnp.float64)
        return dense.at[self.rows, self.cols].add(self.values)


def _spmm(rows: jax.Array, cols: jax.Array, values: jax.Array, x: jax.Array, n_rows: int) -> jax.Array:
    # Row-ordered scatter-add; deterministic on CPU
    return jax.ops.segment_sum(
        values[:, None] * x[cols], rows, num_segments=n_rows, indices_are_sorted=True
    )


def spmm(op: SparseOperator, x) -> Matrix:
    """
    Sparse-dense product.
    Z: Number of stored entries.

    Args:
        op (SparseOperator): Operator ([R, K]).
        x: Dense matrix ([K, C]).

    Raises:
        NumericError: Shape mismatch.

    Returns:
        Matrix: Product ([R, C]).
    """

    x = as_matrix(x, "spmm rhs")
    if op.shape[1] != x.shape[0]:
        raise NumericError(f"spmm: shape mismatch {op.shape} x {x.shape}")
    return _spmm(op.rows, op.cols, op.values, x, op.shape[0])


def _safe_norm(x: jax.Array, axis: int = -1) -> jax.Array:
    # Zero vectors get norm 0 without a NaN gradient
    sq = jnp.sum(x * x, axis=axis)
    positive = sq > 0
    return jnp.where(positive, jnp.sqrt(jnp.where(positive, sq, 1.0)), 0.0)


def cosine_rows(a: jax.Array, b: jax.Array) -> jax.Array:
    """
    Row-wise cosine similarity of two equally shaped matrices; 0 for zero rows.

    Args:
        a (jax.Array): Matrix ([N, D]).
        b (jax.Array): Matrix ([N, D]).

    Returns:
        jax.Array: Similarities ([N]).
    """

    denom = _safe_norm(a) * _safe_norm(b)
    positive = denom > 0
    return jnp.where(positive, jnp.sum(a * b, axis=-1) / jnp.where(positive, denom, 1.0), 0.0)


def cosine_matrix(a: jax.Array, b: jax.Array) -> jax.Array:
    """
    Pairwise cosine similarity; 0 wherever a row has zero norm.

    Args:
        a (jax.Array): Matrix ([N, D]).
        b (jax.Array): Matrix ([M, D]).

    Returns:
        jax.Array: Similarities ([N, M]).
    """

    denom = _safe_norm(a)[:, None] * _safe_norm(b)[None, :]
    positive = denom > 0
    return jnp.where(positive, (a @ b.T) / jnp.where(positive, denom, 1.0), 0.0)


def cosine_similarity(a, b) -> float:
    """
    Cosine similarity of two vectors. The similarity of a zero vector is defined as 0.

    Args:
        a: Vector ([D]).
        b: Vector ([D]).

    Raises:
        NumericError: Length mismatch.

    Returns:
        float: Similarity in [-1, 1].
    """

    a = jnp.ravel(jnp.asarray(a, dtype=jnp.float64))
    b = jnp.ravel(jnp.asarray(b, dtype=jnp.float64))
    if a.shape != b.shape:
        raise NumericError(f"cosine_similarity: length mismatch {a.shape[0]} vs {b.shape[0]}")
    return float(cosine_rows(a[None, :], b[None, :])[0])


@dataclass(eq=False)
class Param:
    """Trainable array with gradient accumulator and adaptive-moment state."""

    value: jax.Array
    grad: jax.Array
    moment1: jax.Array
    moment2: jax.Array
    frozen: bool = False

    @classmethod
    def create(cls, value) -> "Param":
        value = jnp.asarray(value, dtype=jnp.float64)
        zeros = jnp.zeros_like(value)
        return cls(value, zeros, zeros, zeros)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.value.shape)

    @property
    def size(self) -> int:
        return int(self.value.size)

    def accumulate(self, grad) -> None:
        """
        Adds a gradient contribution.

        Args:
            grad: Gradient with the parameter's shape.

        Raises:
            FreezeError: Parameter is frozen.
            NumericError: Shape mismatch or non-finite gradient.
        """

        if self.frozen:
            raise FreezeError("Gradient accumulation into a frozen parameter")
        grad = jnp.asarray(grad, dtype=jnp.float64)
        if grad.shape != self.value.shape:
            raise NumericError(f"Gradient shape {grad.shape} != parameter shape {self.value.shape}")
        if not bool(jnp.all(jnp.isfinite(grad))):
            raise NumericError("Non-finite gradient")
        self.grad = self.grad + grad

    def zero_grad(self) -> None:
        self.grad = jnp.zeros_like(self.value)


@dataclass(eq=False)
class Mlp:
    """Two-layer perceptron act(x W1 + b1) W2 + b2, optionally followed by an output activation."""

    w1: Param  # [D_in, M]
    b1: Param  # [1, M]
    w2: Param  # [M, D_out]
    b2: Param  # [1, D_out]
    activation: str = "sigmoid"
    output_activation: str = "linear"

    @property
    def params(self) -> List[Param]:
        return [self.w1, self.b1, self.w2, self.b2]

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]

    @property
    def is_bottleneck(self) -> bool:
        return self.hidden_dim < max(self.in_dim, self.out_dim)


def glorot_uniform(key: jax.Array, fan_in: int, fan_out: int) -> jax.Array:
    """Uniform initialization in +-sqrt(6 / (fan_in + fan_out))."""

    return jax.nn.initializers.glorot_uniform()(key, (fan_in, fan_out), jnp.float64)


def init_mlp(
    in_dim: int,
    hidden_dim: int,
    out_dim: int,
    activation: str = "sigmoid",
    output_activation: str = "linear",
    seed: int = DEFAULT_SEED,
) -> Mlp:
    """
    Initializes an MLP with Glorot-uniform weights and zero biases.

    Args:
        in_dim (int): Input dim.
        hidden_dim (int): Hidden dim.
        out_dim (int): Output dim.
        activation (str, optional): Hidden activation tag. Defaults to "sigmoid".
        output_activation (str, optional): Output activation tag. Defaults to "linear".
        seed (int, optional): RNG seed. Defaults to 39.

    Returns:
        Mlp: Initialized MLP.
    """

    get_activation(activation)
    get_activation(output_activation)
    key_1, key_2 = jax.random.split(jax.random.key(seed))
    mlp = Mlp(
        Param.create(glorot_uniform(key_1, in_dim, hidden_dim)),
        Param.create(jnp.zeros((1, hidden_dim))),
        Param.create(glorot_uniform(key_2, hidden_dim, out_dim)),
        Param.create(jnp.zeros((1, out_dim))),
        activation,
        output_activation,
    )
    if not mlp.is_bottleneck:
        logger.debug(f"MLP {in_dim}->{hidden_dim}->{out_dim} has no bottleneck")
    return mlp


def mlp_apply(
    values: Sequence[jax.Array], x: jax.Array, activation: str, output_activation: str
) -> jax.Array:
    """
    Pure MLP forward pass as a function of parameter values.
    N: Batch dim.

    Args:
        values (Sequence[jax.Array]): (W1, b1, W2, b2).
        x (jax.Array): Input ([N, D_in]).
        activation (str): Hidden activation tag.
        output_activation (str): Output activation tag.

    Returns:
        jax.Array: Output ([N, D_out]).
    """

    w1, b1, w2, b2 = values
    hidden = ACTIVATIONS[activation](x @ w1 + b1)  # [N, M]
    return ACTIVATIONS[output_activation](hidden @ w2 + b2)  # [N, D_out]


def mlp_forward(mlp: Mlp, x) -> Matrix:
    """
    MLP forward pass on a batch.

    Args:
        mlp (Mlp): MLP.
        x: Input batch ([N, D_in]).

    Raises:
        NumericError: Shape mismatch.

    Returns:
        Matrix: Output batch ([N, D_out]).
    """

    x = as_matrix(x, "mlp input")
    if x.shape[1] != mlp.in_dim:
        raise NumericError(f"mlp_forward: input dim {x.shape[1]} != {mlp.in_dim}")
    return mlp_apply(
        [p.value for p in mlp.params], x, mlp.activation, mlp.output_activation
    )


def mlp_backward(mlp: Mlp, x, upstream_grad) -> Matrix:
    """
    Backpropagates an upstream gradient through the MLP; accumulates parameter gradients.

    Args:
        mlp (Mlp): MLP, evaluated at `x` before.
        x: Input batch ([N, D_in]).
        upstream_grad: Gradient w.r.t. the MLP output ([N, D_out]).

    Raises:
        NumericError: Shape mismatch or non-finite upstream values.

    Returns:
        Matrix: Gradient w.r.t. the input ([N, D_in]).
    """

    x = as_matrix(x, "mlp input")
    upstream_grad = as_matrix(upstream_grad, "mlp upstream gradient")
    if x.shape[1] != mlp.in_dim or upstream_grad.shape != (x.shape[0], mlp.out_dim):
        raise NumericError(
            f"mlp_backward: shapes x={x.shape}, upstream={upstream_grad.shape} "
            f"incompatible with {mlp.in_dim}->{mlp.out_dim}"
        )

    _, vjp_fn = jax.vjp(
        partial(mlp_apply, activation=mlp.activation, output_activation=mlp.output_activation),
        [p.value for p in mlp.params],
        x,
    )
    d_values, d_x = vjp_fn(upstream_grad)
    for param, d_value in zip(mlp.params, d_values):
        param.accumulate(d_value)
    return d_x


@partial(jax.jit, static_argnames=("beta1", "beta2", "eps"))
def adam_updates(
    grads: Tuple[jax.Array, ...],
    mu: Tuple[jax.Array, ...],
    nu: Tuple[jax.Array, ...],
    count: jax.Array,
    beta1: float,
    beta2: float,
    eps: float,
) -> Tuple[Tuple[jax.Array, ...], Tuple[jax.Array, ...], Tuple[jax.Array, ...]]:
    """Bias-corrected adaptive-moment directions; `count` is the number of steps taken before."""

    tx = optax.scale_by_adam(b1=beta1, b2=beta2, eps=eps)
    updates, state = tx.update(grads, optax.ScaleByAdamState(count=count, mu=mu, nu=nu))
    return updates, state.mu, state.nu


def adam_step(
    params: Sequence[Param],
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    step_index: int = 1,
) -> Sequence[Param]:
    """
    Adaptive-moment update with bias correction, applied in place.

    Args:
        params (Sequence[Param]): Parameters with populated gradients.
        lr (float, optional): Learning rate. Defaults to 1e-3.
        beta1 (float, optional): First-moment decay. Defaults to 0.9.
        beta2 (float, optional): Second-moment decay. Defaults to 0.999.
        eps (float, optional): Denominator offset. Defaults to 1e-8.
        step_index (int, optional): 1-based step index used for bias correction. Defaults to 1.

    Raises:
        FreezeError: A parameter is frozen.
        NumericError: Non-finite gradient entries or invalid step index.

    Returns:
        Sequence[Param]: The updated parameters.
    """

    if step_index < 1:
        raise NumericError(f"adam_step: step_index must be >= 1, got {step_index}")
    if len(params) == 0:
        return params
    for param in params:
        if param.frozen:
            raise FreezeError("Optimizer step on a frozen parameter")
        if not bool(jnp.all(jnp.isfinite(param.grad))):
            raise NumericError("adam_step: non-finite gradient")

    updates, mu, nu = adam_updates(
        tuple(p.grad for p in params),
        tuple(p.moment1 for p in params),
        tuple(p.moment2 for p in params),
        jnp.asarray(step_index - 1, dtype=jnp.int32),
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )
    for param, update, m1, m2 in zip(params, updates, mu, nu):
        param.value = param.value - lr * update
        param.moment1 = m1
        param.moment2 = m2
    return params


def finite_difference_check(
    f: Callable[[List[jax.Array]], float],
    params: Sequence[Param],
    h: float = 1e-5,
    floor: float = 1e-5,
) -> float:
    """
    Compares the analytic gradients stored in `params` with central finite differences.

    Args:
        f (Callable[[List[jax.Array]], float]): Scalar function of the parameter values.
        params (Sequence[Param]): Parameters whose `grad` holds the analytic gradient of f.
        h (float, optional): Perturbation. Defaults to 1e-5.
        floor (float, optional): Lower bound of the relative-error denominator. Defaults to 1e-5.

    Raises:
        NumericError: Non-positive h or non-finite function value.

    Returns:
        float: Max relative error |g - g_fd| / max(|g|, |g_fd|, floor) over all entries.
    """

    if h <= 0:
        raise NumericError(f"finite_difference_check: h must be positive, got {h}")
    values = [np.array(p.value, dtype=np.float64) for p in params]

    def evaluate(perturbed: List[np.ndarray]) -> float:
        out = float(f([jnp.asarray(v) for v in perturbed]))
        if not np.isfinite(out):
            raise NumericError("finite_difference_check: non-finite function value")
        return out

    evaluate(values)
    max_error = 0.0
    for param_idx, param in enumerate(params):
        analytic = np.asarray(param.grad, dtype=np.float64)
        for entry in np.ndindex(values[param_idx].shape):
            original = values[param_idx][entry]
            values[param_idx][entry] = original + h
            f_plus = evaluate(values)
            values[param_idx][entry] = original - h
            f_minus = evaluate(values)
            values[param_idx][entry] = original
            numeric = (f_plus - f_minus) / (2 * h)
            error = abs(analytic[entry] - numeric) / max(abs(analytic[entry]), abs(numeric), floor)
            max_error = max(max_error, error)
    return max_error
