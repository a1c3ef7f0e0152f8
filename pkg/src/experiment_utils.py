import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple

import numpy as np
from tqdm import tqdm

from config import ExperimentConfig
from data_utils import get_dataset
from errors import ConfigError, DataError, ProNoGError
from graph import NUM_BUCKETS, FewShotTask, Graph, GraphCollection, homophily_buckets
from model import GcnEncoder, freeze, get_encoder
from prompt import (
    CONDITIONED_VARIANTS,
    VARIANTS,
    PromptContext,
    PromptHead,
    get_prompt_head,
    predict_batch,
    prepare_context,
    task_embeddings,
    task_prototypes,
)
from sampler import KShotSampler, derive_seed
from train_utils import OptimizerConfig, TrainResult, pretrain, tune

logger = logging.getLogger(__name__)


@contextmanager
def phase(name: str) -> Iterator[None]:
    """Prefixes toolkit errors raised inside the block with the phase name (innermost phase wins)."""

    try:
        yield
    except ProNoGError as err:
        if not getattr(err, "phase", None):
            err.phase = name
            err.args = (f"{name}: {err}",) + err.args[1:]
        raise


class ParameterCount(NamedTuple):
    with_bias: int
    without_bias: int


@dataclass
class RunRecord:
    """Outcome of one (task, repeat) run."""

    task: int
    repeat: int
    seed: int
    accuracy: float
    queries: int
    tune_epochs: int = 0
    loss: float = float("nan")


@dataclass
class BucketStat:
    correct: int = 0
    total: int = 0

    @property
    def accuracy(self) -> Optional[float]:
        return self.correct / self.total if self.total else None


@dataclass
class EvalReport:
    """
    Few-shot evaluation outcome. `mean` and `std` are percentages over all runs; `std` is the
    population standard deviation.
    """

    runs: List[RunRecord] = field(default_factory=list)
    mean: float = float("nan")
    std: float = float("nan")
    buckets: Dict[int, BucketStat] = field(default_factory=dict)
    tunable_parameters: ParameterCount = ParameterCount(0, 0)
    timings: Dict[str, float] = field(default_factory=dict)
    variant: str = "pronog"
    dataset: str = ""
    shots: int = 0

    def __post_init__(self) -> None:
        self.tunable_parameters = ParameterCount(*self.tunable_parameters)

    def summarize(self) -> "EvalReport":
        """Recomputes mean/std from the run accuracies (runs sorted by task, then repeat)."""

        self.runs.sort(key=lambda run: (run.task, run.repeat))
        accuracies = np.array([run.accuracy for run in self.runs], dtype=np.float64)
        if len(accuracies):
            self.mean = float(np.mean(accuracies) * 100)
            self.std = float(np.std(accuracies) * 100)
        return self


def count_tunable_parameters(variant: str, dim: int, hidden: int = 64) -> ParameterCount:
    """
    Parameters tuned during downstream adaptation.

    Args:
        variant (str): Adaptation variant.
        dim (int): Embedding dim d.
        hidden (int, optional): Condition-net hidden dim m. Defaults to 64.

    Raises:
        ConfigError: Unsupported variant.

    Returns:
        ParameterCount: Count with biases (2dm + m + d) and weight matrices only (2dm).
    """

    if variant in CONDITIONED_VARIANTS:
        return ParameterCount(2 * dim * hidden + hidden + dim, 2 * dim * hidden)
    elif variant == "single_prompt":
        return ParameterCount(dim, dim)
    elif variant == "no_prompt":
        return ParameterCount(0, 0)
    else:
        raise ConfigError(f"Unsupported variant: {variant}")


def bucket_accuracy(
    query_ids: np.ndarray,
    correct: np.ndarray,
    g: Graph,
    labels: Optional[np.ndarray] = None,
    instance_kind: str = "node",
    buckets: Optional[Dict[int, BucketStat]] = None,
) -> Dict[int, BucketStat]:
    """
    Aggregates query correctness per node homophily bucket; isolated nodes are not counted.

    Args:
        query_ids (np.ndarray): Query node ids ([Q]).
        correct (np.ndarray): Correctness per query ([Q]).
        g (Graph): Graph.
        labels (Optional[np.ndarray], optional): Labels overriding those of g. Defaults to None.
        instance_kind (str, optional): Task instance kind. Defaults to "node".
        buckets (Optional[Dict[int, BucketStat]], optional): Table to accumulate into. Defaults to None.

    Raises:
        DataError: Graph-classification task.

    Returns:
        Dict[int, BucketStat]: Bucket table with all buckets 0..4 (empty ones have total 0).
    """

    if instance_kind != "node":
        raise DataError("bucket analysis requires node task")
    if buckets is None:
        buckets = {idx: BucketStat() for idx in range(NUM_BUCKETS)}
    node_buckets = homophily_buckets(g, labels)
    for node, hit in zip(np.asarray(query_ids), np.asarray(correct)):
        bucket = int(node_buckets[node])
        if bucket < 0:
            continue
        buckets[bucket].total += 1
        buckets[bucket].correct += int(bool(hit))
    return buckets


def instance_labels(data: Graph | GraphCollection) -> np.ndarray:
    if isinstance(data, GraphCollection):
        if data.graph_labels is None:
            raise DataError("graph classification requires graph labels")
        return np.asarray(data.graph_labels, dtype=np.int64)
    if data.labels is None:
        raise DataError("node classification requires node labels")
    return np.asarray(data.labels, dtype=np.int64)


def evaluate_task(
    head: PromptHead, context: PromptContext, task: FewShotTask
) -> Tuple[np.ndarray, float]:
    """
    Predicts the query instances of a task against the prompted support prototypes.

    Returns:
        Tuple[np.ndarray, float]:
            predicted class per query ([Q]),
            query accuracy.
    """

    protos = task_prototypes(head, context, task)
    predictions = predict_batch(task_embeddings(head, context, task.query_ids), protos)
    accuracy = float(np.mean(predictions == task.query_labels)) if len(predictions) else float("nan")
    return predictions, accuracy


def pretrain_encoder(cfg: ExperimentConfig, data: Graph | GraphCollection) -> Tuple[GcnEncoder, TrainResult]:
    """Initializes and pre-trains an encoder for a dataset (not yet frozen)."""

    feature_dim = data.feature_dim
    enc = get_encoder(cfg.encoder, feature_dim, cfg.hidden_dims, cfg.encoder_activation, cfg.seed)
    result = pretrain(
        enc,
        data,
        cfg.pretrain_task,
        cfg.pretrain_epochs,
        cfg.patience,
        OptimizerConfig(cfg.pretrain_lr, cfg.beta1, cfg.beta2, cfg.eps),
        cfg.pretrain_tau,
        cfg.seed,
        cfg.negatives,
        cfg.edge_drop,
        cfg.ego_delta,
        cfg.no_progress_bar,
    )
    return enc, result


def load_data(cfg: ExperimentConfig) -> Graph | GraphCollection:
    return get_dataset(
        cfg.dataset,
        cfg.task_kind,
        cfg.ego_delta,
        cfg.seed,
        cfg.planted_nodes,
        cfg.planted_classes,
        cfg.planted_homophily,
        cfg.planted_degree,
    )


def run_variant(
    cfg: ExperimentConfig,
    variant: Optional[str] = None,
    enc: Optional[GcnEncoder] = None,
    data: Optional[Graph | GraphCollection] = None,
) -> EvalReport:
    """
    Evaluates one adaptation variant over num_tasks tasks x seeds repeats with a frozen encoder.
    Task t is sampled from derive_seed(seed, t); the head of repeat r is initialized from
    derive_seed(seed, t, r).

    Args:
        cfg (ExperimentConfig): Config.
        variant (Optional[str], optional): Variant overriding cfg.variant. Defaults to None.
        enc (Optional[GcnEncoder], optional): Pre-trained encoder; pre-trained from cfg if None.
        data (Optional[Graph | GraphCollection], optional): Dataset; loaded from cfg if None.

    Raises:
        ConfigError: Unsupported variant.
        ProNoGError: Failures of a phase, re-raised with phase context.

    Returns:
        EvalReport: Report.
    """

    variant = variant or cfg.variant
    if variant not in VARIANTS:
        raise ConfigError(f"Unsupported variant: {variant}")
    timings: Dict[str, float] = {}
    with phase("load"):
        data = load_data(cfg) if data is None else data
    if enc is None:
        start = time.perf_counter()
        with phase("pretrain"):
            enc, _ = pretrain_encoder(cfg, data)
        timings["pretrain"] = time.perf_counter() - start
    if not enc.frozen:
        freeze(enc)

    start = time.perf_counter()
    with phase("context"):
        context = prepare_context(enc, data, cfg.delta, variant)
        labels = instance_labels(data)
        sampler = KShotSampler(labels, cfg.shots, cfg.queries, cfg.num_tasks, cfg.seed, context.instance_kind)
    timings["context"] = time.perf_counter() - start

    report = EvalReport(
        variant=variant,
        dataset=cfg.dataset,
        shots=cfg.shots,
        tunable_parameters=count_tunable_parameters(variant, enc.out_dim, cfg.condition_hidden),
    )
    if context.instance_kind == "node":
        report.buckets = {idx: BucketStat() for idx in range(NUM_BUCKETS)}
    optimizer = OptimizerConfig(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    timings["tune"] = 0.0
    timings["evaluate"] = 0.0

    pbar_stats = {"acc": 0.0}
    pbar = tqdm(total=len(sampler) * cfg.seeds, desc=f"Evaluate ({variant})", disable=cfg.no_progress_bar)
    for task_idx, task in enumerate(sampler):
        for repeat_idx in range(cfg.seeds):
            run_seed = derive_seed(cfg.seed, task_idx, repeat_idx)
            head = get_prompt_head(variant, enc.out_dim, cfg.condition_hidden, run_seed, f"task-{task_idx}")

            start = time.perf_counter()
            with phase(f"tune task {task_idx}"):
                result = tune(
                    head,
                    enc,
                    task,
                    tau=cfg.tau,
                    epochs=cfg.tune_epochs,
                    patience=cfg.patience,
                    optimizer=optimizer,
                    delta=cfg.delta,
                    context=context,
                )
            timings["tune"] += time.perf_counter() - start

            start = time.perf_counter()
            predictions, accuracy = evaluate_task(head, context, task)
            if context.instance_kind == "node":
                bucket_accuracy(
                    task.query_ids, predictions == task.query_labels, data, buckets=report.buckets
                )
            timings["evaluate"] += time.perf_counter() - start

            report.runs.append(
                RunRecord(
                    task_idx,
                    repeat_idx,
                    run_seed,
                    accuracy,
                    len(task.query),
                    len(result.losses),
                    result.best_loss,
                )
            )
            pbar.update()
            pbar_stats["acc"] = round(float(np.mean([run.accuracy for run in report.runs])), 4)
            pbar.set_postfix(pbar_stats)
    pbar.close()

    report.timings = timings
    report.summarize()
    logger.info(
        f"{variant}: {cfg.shots}-shot accuracy {report.mean:.2f} +- {report.std:.2f} "
        f"over {len(report.runs)} runs"
    )
    return report


def run_pipeline(cfg: ExperimentConfig) -> Tuple[EvalReport, GcnEncoder, TrainResult]:
    """
    Pre-trains once, freezes the encoder and evaluates cfg.variant on all tasks.

    Returns:
        Tuple[EvalReport, GcnEncoder, TrainResult]:
            report,
            frozen encoder,
            pre-training loss trace.
    """

    with phase("load"):
        data = load_data(cfg)
    start = time.perf_counter()
    with phase("pretrain"):
        enc, pretrain_result = pretrain_encoder(cfg, data)
    elapsed = time.perf_counter() - start
    freeze(enc)
    report = run_variant(cfg, enc=enc, data=data)
    report.timings = {"pretrain": elapsed, **report.timings}
    return report, enc, pretrain_result

