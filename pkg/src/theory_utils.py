"""
Empirical checks of the homophily-sample theory: adding a homophily sample to a homophily
task lowers the contrastive loss more than adding a non-homophily sample, and the number of
homophily samples grows with the homophily ratio.
"""

import logging
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, List, Optional, Sequence

import jax
import jax.numpy as jnp
import numpy as np
import torch
from scipy.stats import spearmanr
from tqdm import tqdm

from contrastive import (
    HOMOPHILY,
    ContrastiveTask,
    build_link_prediction_task,
    classify_sample,
    contrastive_log_probs,
)
from data_utils import planted_homophily_graph
from errors import ConfigError
from graph import Graph
from numerics import DEFAULT_SEED, cosine_rows
from sampler import derive_seed

logger = logging.getLogger(__name__)


@dataclass
class TheoremRecord:
    trial: int
    h: float = float("nan")
    count: float = float("nan")
    violation: bool = False
    loss_homophily: float = float("nan")
    loss_non_homophily: float = float("nan")


@dataclass
class TheoremReport:
    """Counts of a verification run; rank_correlation is None when not applicable."""

    trials: int
    violations: int
    skipped: int = 0
    rank_correlation: Optional[float] = None
    mean_counts: Dict[float, float] = field(default_factory=dict)
    records: List[TheoremRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.violations > self.trials:
            raise ValueError("violations cannot exceed trials")


def expected_homophily_samples(task: ContrastiveTask, p_pos: float, p_neg: float) -> float:
    """
    Expected number of homophily samples of a homophily task under label-consistent similarity,
    sum_u |A_u| |B_u| p_pos (1 - p_neg).

    Args:
        task (ContrastiveTask): Homophily task.
        p_pos (float): Probability that an anchor shares the label of a positive.
        p_neg (float): Probability that an anchor shares the label of a negative.

    Raises:
        ConfigError: Probabilities outside [0, 1].

    Returns:
        float: Expected count.
    """

    if not (0.0 <= p_pos <= 1.0 and 0.0 <= p_neg <= 1.0):
        raise ConfigError(f"probabilities must lie in [0, 1], got {p_pos}, {p_neg}")
    pairs = task.positive_mask.sum(axis=1) * task.negative_mask.sum(axis=1)  # [U]
    return float(pairs.sum() * p_pos * (1.0 - p_neg))


def chorded_cycle(n: int = 12, chord: int = 3, dim: int = 8) -> Graph:
    """Cycle on n nodes plus chords (i, i + chord); every node has non-neighbors for n > 2 chord + 1."""

    edges = [(i, (i + 1) % n) for i in range(n)] + [(i, (i + chord) % n) for i in range(n)]
    return Graph.from_edges(n, edges, np.ones((n, dim)))


@partial(jax.jit, static_argnames=("tau",))
def _task_loss(table, anchors, positives, positive_mask, negatives, negative_mask, tau):
    return -jnp.sum(
        contrastive_log_probs(table, anchors, positives, positive_mask, negatives, negative_mask, tau)
    )


def _loss(task: ContrastiveTask, emb: jax.Array, tau: float) -> float:
    _, *handles = task.arrays()
    return float(_task_loss(emb, *handles, tau=tau))


def verify_theorem1(
    trials: int,
    seed: int = DEFAULT_SEED,
    tau: float = 0.5,
    dim: int = 8,
    max_attempts_factor: int = 20,
    no_progress_bar: bool = True,
) -> TheoremReport:
    """
    Adds one homophily and, alternatively, one non-homophily triplet to a base link-prediction
    task under random embeddings and checks that the homophily addition gives the smaller loss.
    Triplets are classified under raw cosine; losses use the exp-cosine kernel. Trials where both
    candidate triplets classify identically are skipped.

    Args:
        trials (int): Number of non-vacuous trials.
        seed (int, optional): RNG seed. Defaults to 39.
        tau (float, optional): Kernel temperature. Defaults to 0.5.
        dim (int, optional): Embedding dim. Defaults to 8.
        max_attempts_factor (int, optional): Attempt budget per requested trial. Defaults to 20.
        no_progress_bar (bool, optional): Disables progress bar. Defaults to True.

    Raises:
        ConfigError: trials < 1.

    Returns:
        TheoremReport: Violation counts (violation iff loss_h >= loss_nh).
    """

    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    g = chorded_cycle(dim=dim)
    base = build_link_prediction_task(g, 1, seed)
    nodes = np.arange(g.num_nodes)
    records: List[TheoremRecord] = []
    skipped = 0
    attempt = 0

    pbar_stats = {"violations": 0, "skipped": 0}
    with tqdm(total=trials, desc="Theorem 1", disable=no_progress_bar, postfix=pbar_stats) as pbar:
        while len(records) < trials and attempt < max_attempts_factor * trials:
            rng = torch.Generator().manual_seed(derive_seed(seed, attempt))
            attempt += 1
            emb = torch.randn((g.num_nodes, dim), generator=rng, dtype=torch.float64).numpy()
            u = int(torch.randint(g.num_nodes, (1,), generator=rng))
            neighbors = g.neighbors(u)
            non_neighbors = np.setdiff1d(nodes, np.append(neighbors, u))
            a = neighbors[torch.randint(len(neighbors), (2,), generator=rng).numpy()]
            b = non_neighbors[torch.randint(len(non_neighbors), (2,), generator=rng).numpy()]
            kinds = [classify_sample(u, int(a[i]), int(b[i]), emb, g) for i in range(2)]
            if kinds[0] == kinds[1]:
                skipped += 1
                logger.debug(f"Skipping vacuous trial (attempt {attempt}): both {kinds[0]}")
                continue
            hom = 0 if kinds[0] == HOMOPHILY else 1
            emb_jax = jnp.asarray(emb)
            loss_h = _loss(base.with_sample(u, int(a[hom]), int(b[hom])), emb_jax, tau)
            loss_nh = _loss(base.with_sample(u, int(a[1 - hom]), int(b[1 - hom])), emb_jax, tau)
            records.append(
                TheoremRecord(
                    len(records),
                    count=1,
                    violation=loss_h >= loss_nh,
                    loss_homophily=loss_h,
                    loss_non_homophily=loss_nh,
                )
            )
            pbar.update()
            pbar_stats["violations"] = sum(r.violation for r in records)
            pbar_stats["skipped"] = skipped
            pbar.set_postfix(pbar_stats)

    if len(records) < trials:
        logger.warning(f"Theorem 1: only {len(records)}/{trials} non-vacuous trials within budget")
    violations = sum(r.violation for r in records)
    logger.info(f"Theorem 1: {violations} violation(s) in {len(records)} trials, {skipped} skipped")
    return TheoremReport(len(records), violations, skipped, records=records)


def count_homophily_samples(task: ContrastiveTask, emb) -> int:
    """
    Counts triplets (u, a, b), a in A_u, b in B_u, with cos(h_u, h_a) > cos(h_u, h_b).

    Args:
        task (ContrastiveTask): Node-level task.
        emb: Node embeddings ([N, D]).

    Returns:
        int: Number of homophily samples.
    """

    emb = jnp.asarray(emb, dtype=jnp.float64)
    anchor_rows = emb[task.anchors][:, None, :]  # [U, 1, D]
    cos_pos = np.asarray(cosine_rows(anchor_rows, emb[task.positives]))  # [U, P]
    cos_neg = np.asarray(cosine_rows(anchor_rows, emb[task.negatives]))  # [U, Q]
    wins = cos_pos[:, :, None] > cos_neg[:, None, :]  # [U, P, Q]
    valid = task.positive_mask[:, :, None] & task.negative_mask[:, None, :]
    return int(np.sum(wins & valid))


def verify_theorem2(
    h_grid: Sequence[float],
    seeds: int = 10,
    seed: int = DEFAULT_SEED,
    num_nodes: int = 200,
    num_classes: int = 3,
    avg_degree: float = 8.0,
    negatives: int = 5,
    no_progress_bar: bool = True,
) -> TheoremReport:
    """
    Counts homophily samples of a link-prediction task on planted graphs of increasing homophily,
    using the label-consistent planted features as embeddings.

    Args:
        h_grid (Sequence[float]): Strictly increasing target ratios in [0, 1].
        seeds (int, optional): Planted graphs per ratio. Defaults to 10.
        seed (int, optional): Base RNG seed. Defaults to 39.
        num_nodes (int, optional): Planted graph size. Defaults to 200.
        num_classes (int, optional): Planted class count. Defaults to 3.
        avg_degree (float, optional): Planted average degree. Defaults to 8.0.
        negatives (int, optional): Negatives per anchor. Defaults to 5.
        no_progress_bar (bool, optional): Disables progress bar. Defaults to True.

    Raises:
        ConfigError: Empty or non-increasing grid, ratios outside [0, 1], seeds < 1.
        DataError: Infeasible planted graph.

    Returns:
        TheoremReport: Mean count per ratio and Spearman correlation (None for a single ratio).
    """

    h_grid = [float(h) for h in h_grid]
    if not h_grid or seeds < 1:
        raise ConfigError("theorem 2 check requires a non-empty grid and seeds >= 1")
    if any(h < 0.0 or h > 1.0 for h in h_grid) or any(x >= y for x, y in zip(h_grid, h_grid[1:])):
        raise ConfigError(f"h grid must be strictly increasing within [0, 1], got {h_grid}")

    records: List[TheoremRecord] = []
    mean_counts: Dict[float, float] = {}
    for h_idx, h in enumerate(tqdm(h_grid, desc="Theorem 2", disable=no_progress_bar)):
        counts = []
        for seed_idx in range(seeds):
            g = planted_homophily_graph(
                num_nodes, num_classes, h, avg_degree, derive_seed(seed, h_idx, seed_idx)
            )
            task = build_link_prediction_task(g, negatives, derive_seed(seed, h_idx, seed_idx, 1))
            count = count_homophily_samples(task, g.features)
            counts.append(count)
            records.append(TheoremRecord(len(records), h=h, count=count))
        mean_counts[h] = float(np.mean(counts))
        logger.debug(f"Theorem 2: h={h:.2f}, mean homophily samples {mean_counts[h]:.1f}")

    rank_correlation = None
    if len(h_grid) > 1:
        rank_correlation = float(spearmanr(h_grid, list(mean_counts.values())).correlation)
        logger.info(f"Theorem 2: rank correlation {rank_correlation:.4f} over {len(h_grid)} ratios")
    else:
        logger.info("Theorem 2: rank correlation not applicable for a single ratio")
    return TheoremReport(len(records), 0, 0, rank_correlation, mean_counts, records)
