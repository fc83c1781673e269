import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leaklab.data import (
    dataset_from_dict,
    dataset_to_dict,
    gen_modular_addition,
    gen_toy_2d,
    make_partition,
    partition_from_dict,
    partition_to_dict,
    round_half_up,
    sample_random_dataset,
    teacher_count,
)
from leaklab.errors import InvalidSplit
from leaklab.numkit import RngState


def test_random_dataset_small():
    ds = sample_random_dataset(RngState(0), 12, 5, 3)
    counts = np.bincount(ds.labels, minlength=3)
    assert ds.inputs.shape == (12, 5)
    assert counts.sum() == 12 and np.all((counts >= 0) & (counts <= 12))


def test_random_dataset_balanced_binary():
    # class-1 fraction has sd 0.5/sqrt(1e5) = 0.0016; (0.49, 0.51) is a 6-sigma band
    ds = sample_random_dataset(RngState(1), 100_000, 1, 2)
    assert 0.49 < ds.labels.mean() < 0.51


def test_random_dataset_deterministic():
    a = sample_random_dataset(RngState(3), 20, 4, 2)
    b = sample_random_dataset(RngState(3), 20, 4, 2)
    assert a.digest() == b.digest()
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.labels, b.labels)


def test_random_dataset_inputs_and_labels_use_separate_streams():
    # changing the label count leaves the input stream untouched
    a = sample_random_dataset(RngState(3), 20, 4, 2)
    b = sample_random_dataset(RngState(3), 20, 4, 7)
    assert np.array_equal(a.inputs, b.inputs)


def test_random_dataset_validates_arguments():
    with pytest.raises(ValueError):
        sample_random_dataset(RngState(0), 5, 2, 1)


def test_modular_addition_full_size():
    ds = gen_modular_addition(113)
    assert ds.n == 12_769 and ds.d == 3 * 113


def test_modular_addition_small_cases():
    ds = gen_modular_addition(2)
    assert ds.labels[1 * 2 + 1] == 0
    ds5 = gen_modular_addition(5)
    assert np.array_equal(np.bincount(ds5.labels), [5] * 5)


@pytest.mark.parametrize("p", [2, 3, 7, 23])
def test_modular_addition_structure(p):
    ds = gen_modular_addition(p)
    X = ds.inputs
    assert np.all(X.sum(axis=1) == 3)
    for block in range(3):
        assert np.all(X[:, block * p:(block + 1) * p].sum(axis=1) == 1)
    third = X[:, 2 * p:].argmax(axis=1)
    assert np.all(third == third[0])
    a = X[:, :p].argmax(axis=1)
    b = X[:, p:2 * p].argmax(axis=1)
    assert np.array_equal(np.arange(p * p), a * p + b)
    assert np.array_equal(ds.labels, (a + b) % p)


def test_toy2d():
    one = gen_toy_2d(RngState(0), 1, 3)
    assert one.inputs.shape == (1, 2)
    ds = gen_toy_2d(RngState(0), 500, 20)
    assert ds.d == 2 and ds.labels.max() < 20 and ds.kind == "toy2d"


def test_teacher_count_and_rounding():
    assert teacher_count(113**2, 0.3) == 3830
    assert round_half_up(0.5) == 1 and round_half_up(2.5) == 3 and round_half_up(2.49) == 2


def test_partition_modular_addition_sizes():
    ds = gen_modular_addition(113)
    part = make_partition(RngState(0), ds, 0.3, 0.9)
    assert part.teacher_idx.size == 3830
    assert part.val_idx.size == ds.n - 3830
    assert np.intersect1d(part.val_idx, part.teacher_idx).size == 0


def test_partition_sixty_forty():
    ds = gen_toy_2d(RngState(1), 200, 3)
    part = make_partition(RngState(2), ds, 0.5, 0.6)
    assert part.teacher_idx.size == 100
    assert part.student_train_idx.size == 60 and part.student_test_idx.size == 40


def test_partition_deterministic():
    ds = sample_random_dataset(RngState(0), 50, 3, 2)
    a = make_partition(RngState(9), ds, 1.0, 0.5)
    b = make_partition(RngState(9), ds, 1.0, 0.5)
    assert np.array_equal(a.student_train_idx, b.student_train_idx)
    assert np.array_equal(a.val_dataset.inputs, b.val_dataset.inputs)


def test_partition_random_iid_fresh_validation():
    ds = sample_random_dataset(RngState(0), 50, 3, 2)
    part = make_partition(RngState(1), ds, 1.0, 0.8)
    assert part.val_dataset is not None
    assert part.val_dataset.n == part.student_test_idx.size
    X_val, _ = part.val_data(ds)
    assert not np.any(np.isin(X_val[:, 0], ds.inputs[:, 0]))


@settings(max_examples=50, deadline=None)
@given(
    n=st.integers(4, 200),
    frac=st.floats(0.2, 1.0),
    rho=st.floats(0.05, 0.95),
    seed=st.integers(0, 10_000),
)
def test_partition_is_exact(n, frac, rho, seed):
    ds = gen_toy_2d(RngState(seed), n, 3)
    try:
        part = make_partition(RngState(seed + 1), ds, frac, rho)
    except InvalidSplit:
        n_t = teacher_count(n, frac)
        n_tr = round_half_up(rho * n_t)
        assert n_t == 0 or n_tr in (0, n_t) or n_t == n
        return
    both = np.concatenate([part.student_train_idx, part.student_test_idx])
    assert np.array_equal(np.sort(both), part.teacher_idx)
    assert part.student_train_idx.size == round_half_up(rho * part.teacher_idx.size)
    assert np.array_equal(np.sort(np.concatenate([part.teacher_idx, part.val_idx])), np.arange(n))


@pytest.mark.parametrize("frac,rho", [(0.0, 0.5), (0.5, 1.0), (0.5, 0.0)])
def test_partition_rejects_invalid(frac, rho):
    ds = gen_toy_2d(RngState(0), 10, 2)
    with pytest.raises(InvalidSplit):
        make_partition(RngState(0), ds, frac, rho)


def test_partition_empty_split():
    ds = gen_toy_2d(RngState(0), 2, 2)
    with pytest.raises(InvalidSplit):
        make_partition(RngState(0), ds, 0.5, 0.5)


def test_dataset_json_round_trip():
    ds = sample_random_dataset(RngState(4), 7, 3, 4)
    back = dataset_from_dict(json.loads(json.dumps(dataset_to_dict(ds))))
    assert np.array_equal(back.inputs, ds.inputs) and np.array_equal(back.labels, ds.labels)
    assert back.digest() == ds.digest() and back.kind == ds.kind and back.seed == 4


def test_partition_json_round_trip():
    ds = sample_random_dataset(RngState(4), 20, 3, 2)
    part = make_partition(RngState(5), ds, 1.0, 0.6)
    back = partition_from_dict(json.loads(json.dumps(partition_to_dict(part))))
    assert np.array_equal(back.student_test_idx, part.student_test_idx)
    assert np.array_equal(back.val_dataset.inputs, part.val_dataset.inputs)
