import numpy as np

from mfasr.rng import Rng


def test_same_seed_same_stream():
    a = Rng(42).normal(size=(4, 4))
    b = Rng(42).normal(size=(4, 4))
    assert np.array_equal(a, b)


def test_different_seeds_differ():
    a = Rng(1).normal(size=64)
    b = Rng(2).normal(size=64)
    assert not np.array_equal(a, b)


def test_split_reproducible_and_independent():
    root = Rng(7)
    child_a = root.split(3).uniform(size=16)
    # consuming the parent in between must not change the child stream
    root.normal(size=100)
    child_b = Rng(7).split(3).uniform(size=16)
    assert np.array_equal(child_a, child_b)
    assert not np.array_equal(child_a, Rng(7).split(4).uniform(size=16))


def test_nested_split_paths():
    a = Rng(0).split(1).split(2).normal(size=8)
    b = Rng(0).split(1).split(2).normal(size=8)
    c = Rng(0).split(2).split(1).normal(size=8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_default_dtype_is_float32():
    assert Rng(0).normal(size=4).dtype == np.float32
    assert Rng(0).uniform(size=4).dtype == np.float32
    assert Rng(0).normal(size=4, dtype=np.float64).dtype == np.float64


def test_scalar_draws_are_arrays():
    v = Rng(0).uniform()
    assert float(v) >= 0.0 and float(v) < 1.0


def test_integers_bounds():
    draws = Rng(5).integers(0, 10, size=1000)
    assert draws.min() >= 0 and draws.max() <= 9


def test_choice_and_shuffle():
    rng = Rng(9)
    seq = (12, 8, 6)
    for _ in range(50):
        assert rng.choice(seq) in seq
    items = list(range(20))
    rng.shuffle(items)
    assert sorted(items) == list(range(20))
