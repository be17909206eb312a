"""Portable PRNG: reference vectors, distribution sanity, stream independence."""

from __future__ import annotations

import numpy as np
import pytest

from tinyallm.rng import GOLDEN, Stream, fnv1a64, mix64

# Published SplitMix64 outputs for seed 0 (first three values of the
# reference implementation's sequence).
SPLITMIX64_SEED0 = (0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F)


def test_splitmix64_reference_vector():
    s = Stream(0)
    assert tuple(s.raw64() for _ in range(3)) == SPLITMIX64_SEED0


def test_mix64_matches_stream_indexing():
    s = Stream(42)
    first = s.raw64()
    assert first == mix64((42 + GOLDEN) % 2**64)


def test_fnv1a64_reference_vectors():
    # Offset basis for the empty string, and the standard 'a' test vector.
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C


def test_batch_equals_scalar_sequence():
    batch = Stream(99).uniform(8)
    s = Stream(99)
    singles = np.array([s.uniform() for _ in range(8)])
    assert np.array_equal(batch, singles)


def test_uniform_range_and_mean():
    u = Stream(12345).uniform(50000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01


def test_normal_moments():
    x = Stream(12345).normal(50000)
    assert abs(x.mean()) < 0.02
    assert abs(x.std() - 1.0) < 0.02
    assert np.isfinite(x).all()


def test_normal_scale():
    a = Stream(7).normal((3, 4), scale=0.5)
    b = Stream(7).normal((3, 4))
    assert np.allclose(a, 0.5 * b)
    assert a.shape == (3, 4)


def test_derive_is_order_independent_of_consumption():
    parent = Stream(11)
    child_before = parent.derive("x").uniform(4)
    parent.uniform(100)  # consuming the parent must not move the child
    child_after = parent.derive("x").uniform(4)
    assert np.array_equal(child_before, child_after)


def test_derive_labels_distinct():
    base = Stream(5)
    assert base.derive("a").seed != base.derive("b").seed
    assert base.derive("a", "b").seed != base.derive("ab").seed


def test_randint_bounds_and_uniformity():
    s = Stream(3)
    draws = [s.randint(5) for _ in range(5000)]
    assert min(draws) == 0 and max(draws) == 4
    counts = np.bincount(draws, minlength=5)
    assert (counts > 800).all()


def test_randint_rejects_nonpositive():
    with pytest.raises(ValueError):
        Stream(0).randint(0)


def test_sample_without_replacement():
    s = Stream(21)
    got = s.sample(list(range(10)), 4)
    assert len(got) == 4 and len(set(got)) == 4
    with pytest.raises(ValueError):
        s.sample([1, 2], 3)


def test_shuffle_is_permutation():
    items = list(range(20))
    out = Stream(8).shuffle(items)
    assert sorted(out) == items
    assert out != items  # vanishingly unlikely to be identity
