import numpy as np

from elmanlab.rng import SeededRng


def test_same_stream_is_bit_identical():
    a = SeededRng(42).generator().normal(size=1000)
    b = SeededRng(42).generator().normal(size=1000)
    assert np.array_equal(a, b)


def test_split_is_deterministic():
    a = SeededRng(7).split("task").generator().normal(size=100)
    b = SeededRng(7).split("task").generator().normal(size=100)
    assert np.array_equal(a, b)


def test_split_changes_stream():
    base = SeededRng(7)
    a = base.split("task-a").generator().normal(size=100)
    b = base.split("task-b").generator().normal(size=100)
    assert not np.array_equal(a, b)


def test_distinct_seeds_differ():
    a = SeededRng(1).generator().normal(size=100)
    b = SeededRng(2).generator().normal(size=100)
    assert not np.array_equal(a, b)


def test_nested_splits_are_independent_of_sibling_order():
    base = SeededRng(0)
    direct = base.split("x").split("y")
    again = base.split("x").split("y")
    assert direct == again
    assert direct != base.split("y").split("x")


def test_split_streams_look_uncorrelated():
    base = SeededRng(123)
    a = base.split(0).generator().normal(size=20000)
    b = base.split(1).generator().normal(size=20000)
    corr = np.corrcoef(a, b)[0, 1]
    assert abs(corr) < 0.03
