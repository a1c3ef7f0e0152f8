import logging
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple

import jax
import jax.numpy as jnp
import numpy as np
from tqdm import trange

from contrastive import (
    ContrastiveTask,
    contrastive_log_probs,
    get_pretrain_task,
    graphcl_instances,
    handle_table,
)
from errors import ConfigError, FreezeError, NumericError
from graph import FewShotTask, Graph, GraphCollection
from model import GcnEncoder, gcn_apply, parameter_digest
from numerics import DEFAULT_SEED, Param, adam_step, adam_updates, as_matrix
from prompt import PromptContext, PromptHead, prepare_context, support_objective
from sampler import derive_seed

logger = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.lr < 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.eps <= 0:
            raise ConfigError(f"invalid optimizer config: {self}")


@dataclass
class TrainResult:
    """Loss trace of a training run; `best_losses` is the running minimum."""

    losses: List[float] = field(default_factory=list)
    best_losses: List[float] = field(default_factory=list)
    stopped_early: bool = False

    @property
    def best_loss(self) -> float:
        return self.best_losses[-1] if self.best_losses else float("nan")

    def as_log(self) -> Dict[str, List[float]]:
        return {"loss": self.losses, "best_loss": self.best_losses}


def pretrain_objective(
    weights: Sequence[jax.Array],
    rows: jax.Array,
    cols: jax.Array,
    values: jax.Array,
    x: jax.Array,
    segments: jax.Array,
    anchors: jax.Array,
    positives: jax.Array,
    positive_mask: jax.Array,
    negatives: jax.Array,
    negative_mask: jax.Array,
    tau: float,
    activations: tuple,
    num_segments: int,
    root: bool = False,
) -> jax.Array:
    """
    Standardized contrastive loss as a function of encoder weights.

    Returns:
        jax.Array: Loss ([1]).
    """

    emb = gcn_apply(weights, rows, cols, values, x, activations, root)
    table = handle_table(emb, segments, num_segments)
    log_p = contrastive_log_probs(table, anchors, positives, positive_mask, negatives, negative_mask, tau)
    return -jnp.sum(log_p)


pretrain_value_and_grad = jax.jit(
    jax.value_and_grad(pretrain_objective), static_argnames=("activations", "num_segments", "root")
)


def pretrain_step(enc: GcnEncoder, task: ContrastiveTask, tau: float) -> float:
    """
    Evaluates the contrastive loss of a task and accumulates encoder gradients.

    Args:
        enc (GcnEncoder): Unfrozen encoder.
        task (ContrastiveTask): Task over `task.graph`.
        tau (float): Kernel temperature.

    Raises:
        FreezeError: Encoder is frozen.
        NumericError: Non-finite loss.

    Returns:
        float: Loss before the update.
    """

    if enc.frozen:
        raise FreezeError("pre-training a frozen encoder")
    op = enc.operator(task.graph)
    loss, d_weights = pretrain_value_and_grad(
        [p.value for p in enc.layers],
        op.rows,
        op.cols,
        op.values,
        as_matrix(task.graph.features, "features"),
        *task.arrays(),
        tau,
        activations=tuple(enc.activations),
        num_segments=task.num_segments,
        root=enc.root,
    )
    loss = float(loss)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite contrastive loss ({loss}) on task {task.name}")
    for param, d_weight in zip(enc.layers, d_weights):
        param.accumulate(d_weight)
    return loss


def pretrain(
    enc: GcnEncoder,
    source: Graph | GraphCollection,
    task_name: str = "graphcl",
    epochs: int = 2000,
    patience: int = 50,
    optimizer: Optional[OptimizerConfig] = None,
    tau: float = 0.5,
    seed: int = DEFAULT_SEED,
    negatives: int = 1,
    edge_drop: float = 0.2,
    delta: int = 2,
    no_progress_bar: bool = True,
) -> TrainResult:
    """
    Pre-trains the encoder with a contrastive task re-sampled every epoch from a per-epoch seed.
    Stops at the epoch cap or once the best loss has not improved for `patience` epochs.

    Args:
        enc (GcnEncoder): Unfrozen encoder, updated in place.
        source (Graph | GraphCollection): Pre-training data.
        task_name (str, optional): link_prediction, graphcl or dgi. Defaults to "graphcl".
        epochs (int, optional): Epoch cap. Defaults to 2000.
        patience (int, optional): Early stopping patience. Defaults to 50.
        optimizer (OptimizerConfig, optional): Adaptive-moment settings.
        tau (float, optional): Kernel temperature. Defaults to 0.5.
        seed (int, optional): RNG seed. Defaults to 39.
        negatives (int, optional): Link prediction negatives per anchor. Defaults to 1.
        edge_drop (float, optional): GraphCL edge drop ratio. Defaults to 0.2.
        delta (int, optional): GraphCL ego radius on single graphs. Defaults to 2.
        no_progress_bar (bool, optional): Disables progress bar. Defaults to True.

    Raises:
        FreezeError: Encoder is frozen.
        NumericError: Non-finite loss.

    Returns:
        TrainResult: Loss trace.
    """

    if enc.frozen:
        raise FreezeError("pre-training a frozen encoder")
    if epochs < 1 or patience < 1:
        raise ConfigError(f"epochs and patience must be positive, got {epochs}, {patience}")
    optimizer = optimizer or OptimizerConfig()
    instances = graphcl_instances(source, delta) if task_name == "graphcl" else None

    result = TrainResult()
    best_loss = float("inf")
    stale_epochs = 0
    pbar_stats = {"loss": 0.0, "best": 0.0}
    pbar = trange(epochs, desc="Pretrain", disable=no_progress_bar, postfix=pbar_stats)
    for epoch_idx in pbar:
        task = get_pretrain_task(
            task_name, source, derive_seed(seed, epoch_idx), negatives, edge_drop, delta, instances
        )
        for param in enc.layers:
            param.zero_grad()
        try:
            loss = pretrain_step(enc, task, tau)
        except NumericError as err:
            raise NumericError(f"pretrain epoch {epoch_idx}: {err}") from err
        adam_step(enc.layers, optimizer.lr, optimizer.beta1, optimizer.beta2, optimizer.eps, epoch_idx + 1)

        # Early stopping on the best loss
        if loss < best_loss:
            best_loss, stale_epochs = loss, 0
        else:
            stale_epochs += 1
        result.losses.append(loss)
        result.best_losses.append(best_loss)
        pbar_stats["loss"] = round(loss, 6)
        pbar_stats["best"] = round(best_loss, 6)
        pbar.set_postfix(pbar_stats)
        if stale_epochs >= patience:
            logger.info(f"Pretrain: early stop at epoch {epoch_idx + 1}, best loss {best_loss:.6f}")
            result.stopped_early = True
            break

    logger.info(f"Pretrain ({task_name}): {len(result.losses)} epochs, best loss {best_loss:.6f}")
    return result


prompt_value_and_grad = jax.value_and_grad(support_objective)


@partial(
    jax.jit,
    static_argnames=(
        "variant",
        "activation",
        "output_activation",
        "num_instances",
        "num_classes",
        "beta1",
        "beta2",
        "eps",
    ),
)
def tune_step(
    values: List[jax.Array],
    mu: List[jax.Array],
    nu: List[jax.Array],
    count: jax.Array,
    emb: jax.Array,
    condition: Optional[jax.Array],
    segments: Optional[jax.Array],
    support_ids: jax.Array,
    support_pos: jax.Array,
    tau: float,
    lr: float,
    variant: str,
    activation: str,
    output_activation: str,
    num_instances: int,
    num_classes: int,
    beta1: float,
    beta2: float,
    eps: float,
) -> Tuple[jax.Array, List[jax.Array], List[jax.Array], List[jax.Array]]:
    """
    Performs a single tuning step: support loss and gradient at `values`, then an Adam update.

    Returns:
        Tuple[jax.Array, List[jax.Array], List[jax.Array], List[jax.Array]]:
            loss at `values` ([1]), NaN if a gradient entry is not finite,
            updated values,
            first moments,
            second moments.
    """

    loss, grads = prompt_value_and_grad(
        values,
        emb,
        condition,
        segments,
        support_ids,
        support_pos,
        tau,
        variant,
        activation,
        output_activation,
        num_instances,
        num_classes,
    )
    finite = jnp.all(jnp.asarray([jnp.all(jnp.isfinite(grad)) for grad in grads] + [True]))
    updates, mu, nu = adam_updates(grads, mu, nu, count, beta1=beta1, beta2=beta2, eps=eps)
    values = [value - lr * update for value, update in zip(values, updates)]
    return jnp.where(finite, loss, jnp.nan), values, list(mu), list(nu)


def tune(
    head: PromptHead,
    enc: GcnEncoder,
    task: FewShotTask,
    source: Optional[Graph | GraphCollection] = None,
    tau: float = 0.5,
    epochs: int = 2000,
    patience: int = 50,
    optimizer: Optional[OptimizerConfig] = None,
    delta: int = 2,
    context: Optional[PromptContext] = None,
    no_progress_bar: bool = True,
) -> TrainResult:
    """
    Tunes the prompt head on the support set of a few-shot task; the encoder stays frozen.
    Every epoch recomputes prompts, prompted (and pooled) embeddings, support prototypes and the
    prototype loss. The best-loss parameters are restored at the end.

    Args:
        head (PromptHead): Prompt head, updated in place.
        enc (GcnEncoder): Frozen encoder.
        task (FewShotTask): Few-shot task.
        source (Optional[Graph | GraphCollection], optional): Dataset; unused when `context` is given.
        tau (float, optional): Temperature. Defaults to 0.5.
        epochs (int, optional): Epoch cap. Defaults to 2000.
        patience (int, optional): Early stopping patience. Defaults to 50.
        optimizer (OptimizerConfig, optional): Adaptive-moment settings.
        delta (int, optional): Readout radius. Defaults to 2.
        context (Optional[PromptContext], optional): Precomputed context. Defaults to None.
        no_progress_bar (bool, optional): Disables progress bar. Defaults to True.

    Raises:
        FreezeError: Encoder not frozen, frozen head parameters, or encoder parameters changed
            during tuning.
        NumericError: Non-finite loss or gradient.
        ConfigError: Context built for another variant or instance kind.

    Returns:
        TrainResult: Loss trace.
    """

    if not enc.frozen:
        raise FreezeError("tune requires a frozen encoder")
    if tau <= 0 or epochs < 1 or patience < 1:
        raise ConfigError(f"invalid tuning config: tau={tau}, epochs={epochs}, patience={patience}")
    optimizer = optimizer or OptimizerConfig()
    digest = parameter_digest(enc)
    if context is None:
        if source is None:
            raise ConfigError("tune needs either a dataset or a precomputed context")
        context = prepare_context(enc, source, delta, head.variant)
    if context.variant != head.variant:
        raise ConfigError(f"context prepared for {context.variant}, head is {head.variant}")
    if context.instance_kind != task.instance_kind:
        raise ConfigError(f"{task.instance_kind} task on a {context.instance_kind} context")

    params: List[Param] = head.params
    if any(param.frozen for param in params):
        raise FreezeError("tuning a frozen prompt head")
    classes = tuple(sorted(task.classes))
    support_ids = jnp.asarray(task.support_ids)
    support_pos = jnp.asarray(np.searchsorted(classes, task.support_labels))
    values = [p.value for p in params]
    mu = [jnp.zeros_like(value) for value in values]
    nu = [jnp.zeros_like(value) for value in values]

    result = TrainResult()
    best_loss = float("inf")
    best_values = values
    stale_epochs = 0
    pbar_stats = {"loss": 0.0, "best": 0.0}
    pbar = trange(epochs, desc="Tune", disable=no_progress_bar, postfix=pbar_stats)
    for epoch_idx in pbar:
        loss, next_values, mu, nu = tune_step(
            values,
            mu,
            nu,
            jnp.asarray(epoch_idx, dtype=jnp.int32),
            context.embeddings,
            context.condition,
            context.segments,
            support_ids,
            support_pos,
            tau,
            optimizer.lr,
            variant=head.variant,
            activation=head.activation,
            output_activation=head.output_activation,
            num_instances=context.num_instances,
            num_classes=len(classes),
            beta1=optimizer.beta1,
            beta2=optimizer.beta2,
            eps=optimizer.eps,
        )
        loss = float(loss)
        if not np.isfinite(loss):
            raise NumericError(f"tune epoch {epoch_idx}: non-finite prototype loss or gradient")

        if loss < best_loss:
            best_loss, stale_epochs = loss, 0
            best_values = values
        else:
            stale_epochs += 1
        result.losses.append(loss)
        result.best_losses.append(best_loss)
        pbar_stats["loss"] = round(loss, 6)
        pbar_stats["best"] = round(best_loss, 6)
        pbar.set_postfix(pbar_stats)

        # Nothing to tune
        if not params:
            break
        if stale_epochs >= patience:
            logger.debug(f"Tune: early stop at epoch {epoch_idx + 1}, best loss {best_loss:.6f}")
            result.stopped_early = True
            break
        values = next_values

    for param, value, m1, m2 in zip(params, best_values, mu, nu):
        param.value, param.moment1, param.moment2 = value, m1, m2
    if parameter_digest(enc) != digest:
        raise FreezeError("encoder parameters changed during tuning")
    return result
