import numpy as np
import pytest

from errors import DataError
from sampler import KShotSampler, derive_seed, get_class_assignments, resolve_queries, sample_kshot_task


def test_class_assignments_skip_unlabeled():
    assignments = get_class_assignments(np.array([1, -1, 0, 1, 0]))
    assert list(assignments) == [0, 1]
    assert assignments[1].tolist() == [0, 3]


def test_one_shot_support_size():
    labels = np.repeat([0, 1, 2], 5)
    task = sample_kshot_task(labels, 1, 2, seed=0)
    assert len(task.support) == 3
    assert sorted(task.support_labels.tolist()) == [0, 1, 2]
    assert np.all(labels[task.support_ids] == task.support_labels)
    assert np.all(labels[task.query_ids] == task.query_labels)


def test_same_seed_same_task():
    labels = np.repeat([0, 1], 10)
    assert sample_kshot_task(labels, 2, 3, seed=7) == sample_kshot_task(labels, 2, 3, seed=7)
    assert sample_kshot_task(labels, 2, 3, seed=7) != sample_kshot_task(labels, 2, 3, seed=8)


def test_support_and_query_partition():
    labels = np.repeat([0, 1], 10)
    task = sample_kshot_task(labels, 5, 5, seed=3)
    ids = task.support_ids.tolist() + task.query_ids.tolist()
    assert sorted(ids) == list(range(20))


def test_insufficient_class():
    with pytest.raises(DataError, match="needs k \\+ q"):
        sample_kshot_task(np.array([0, 0, 1]), 1, 1, seed=0)
    with pytest.raises(DataError):
        sample_kshot_task(np.array([-1, -1]), 1, 1, seed=0)


def test_resolve_queries():
    labels = np.repeat([0, 1], [30, 4])
    assert resolve_queries(labels, 1) == 3
    assert resolve_queries(np.repeat([0, 1], 30), 1) == 10
    assert resolve_queries(np.repeat([0, 1], 30), 1, 2) == 2


def test_derive_seed():
    assert derive_seed(39, 1, 2) == derive_seed(39, 1, 2)
    assert derive_seed(39, 1, 2) != derive_seed(39, 2, 1)
    assert 0 <= derive_seed(39, 5) < 2**31


def test_kshot_sampler():
    labels = np.repeat([0, 1, 2], 12)
    sampler = KShotSampler(labels, k=2, q=None, num_tasks=4, rng_seed=39)
    tasks = list(sampler)
    assert len(sampler) == 4 and len(tasks) == 4
    assert all(len(task.query) == 3 * 10 for task in tasks)
    assert tasks[2] == sampler.task(2)
    assert tasks[0] != tasks[1]


def test_kshot_sampler_without_queries():
    with pytest.raises(DataError):
        KShotSampler(np.repeat([0, 1], 2), k=2, q=None, num_tasks=1, rng_seed=0)
