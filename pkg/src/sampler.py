import logging
from typing import Dict, Iterator, Optional

import numpy as np
import torch
from torch.utils import data

from errors import DataError
from graph import FewShotTask

logger = logging.getLogger(__name__)

DEFAULT_QUERIES = 10


def derive_seed(base_seed: int, *indices: int) -> int:
    """
    Derives an independent seed from a base seed and a tuple of indices (e.g., task and repeat index).

    Args:
        base_seed (int): Base seed.
        *indices (int): Indices.

    Returns:
        int: Derived 31-bit seed.
    """

    state = np.random.SeedSequence([base_seed, *indices]).generate_state(1)[0]
    return int(state & 0x7FFFFFFF)


def get_class_assignments(labels: np.ndarray) -> Dict[int, np.ndarray]:
    """
    Sweeps over labels to get instance indices for each class index; negative labels are skipped.

    Args:
        labels (np.ndarray): Instance labels ([N]).

    Returns:
        Dict[int, np.ndarray]: Class index -> instance indices (ascending), classes ascending.
    """

    labels = np.asarray(labels, dtype=np.int64)
    return {int(c): np.flatnonzero(labels == c) for c in np.unique(labels[labels >= 0])}


def resolve_queries(labels: np.ndarray, k: int, q: Optional[int] = None) -> int:
    """
    Query-set size per class: min(q, smallest class size - k), with q defaulting to 10.

    Args:
        labels (np.ndarray): Instance labels ([N]).
        k (int): Shots.
        q (Optional[int], optional): Requested queries per class. Defaults to 10.

    Returns:
        int: Queries per class.
    """

    q = DEFAULT_QUERIES if q is None else q
    assignments = get_class_assignments(labels)
    if not assignments:
        return q
    smallest = min(len(indices) for indices in assignments.values())
    return max(0, min(q, smallest - k))


def sample_kshot_task(
    labels: np.ndarray,
    k: int,
    q: int,
    seed: int,
    instance_kind: str = "node",
) -> FewShotTask:
    """
    Samples a k-shot task: k support and q query instances per class, disjoint and uniform
    without replacement.

    Args:
        labels (np.ndarray): Instance labels ([N]); negative entries are unlabeled.
        k (int): Shots per class.
        q (int): Queries per class.
        seed (int): RNG seed.
        instance_kind (str, optional): node or graph. Defaults to "node".

    Raises:
        DataError: A class has fewer than k + q instances, or no labeled instances.

    Returns:
        FewShotTask: Sampled task.
    """

    if k < 1 or q < 0:
        raise DataError(f"invalid task size k={k}, q={q}")
    assignments = get_class_assignments(labels)
    if not assignments:
        raise DataError("no labeled instances")
    rng = torch.Generator().manual_seed(seed)
    support, query = [], []
    for class_idx, indices in assignments.items():
        if len(indices) < k + q:
            raise DataError(
                f"class {class_idx} has {len(indices)} instances, needs k + q = {k + q}"
            )
        perm = torch.randperm(len(indices), generator=rng).numpy()
        support.extend((int(idx), class_idx) for idx in indices[perm[:k]])
        query.extend((int(idx), class_idx) for idx in indices[perm[k : k + q]])
    return FewShotTask(tuple(assignments), tuple(support), tuple(query), instance_kind, k)


class KShotSampler(data.Sampler[FewShotTask]):
    """Sampler yielding the few-shot tasks of an evaluation, one derived seed per task."""

    def __init__(
        self,
        labels: np.ndarray,
        k: int,
        q: Optional[int],
        num_tasks: int,
        rng_seed: int,
        instance_kind: str = "node",
    ) -> None:
        """
        Initializes task sampler.

        Args:
            labels (np.ndarray): Instance labels ([N]).
            k (int): Shots per class.
            q (Optional[int]): Requested queries per class, capped by availability.
            num_tasks (int): Number of tasks.
            rng_seed (int): Base RNG seed.
            instance_kind (str, optional): node or graph. Defaults to "node".
        """

        self.labels = np.asarray(labels, dtype=np.int64)
        self.k = k
        self.q = resolve_queries(self.labels, k, q)
        self.num_tasks = num_tasks
        self.rng_seed = rng_seed
        self.instance_kind = instance_kind

        if self.q < 1:
            raise DataError(f"not enough labeled instances for {k}-shot tasks with queries")

    def __len__(self) -> int:
        return self.num_tasks

    def task(self, task_idx: int) -> FewShotTask:
        return sample_kshot_task(
            self.labels,
            self.k,
            self.q,
            derive_seed(self.rng_seed, task_idx),
            self.instance_kind,
        )

    def __iter__(self) -> Iterator[FewShotTask]:
        for task_idx in range(self.num_tasks):
            yield self.task(task_idx)
