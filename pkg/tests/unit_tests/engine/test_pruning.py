import numpy as np
import pytest
from pytest import mark, param

from HyperFedSim.engine import kept_count, prune_delta


def test_prune_keeps_largest_magnitudes():
    delta = np.array([5.0, 0.1, -0.2, 0.0, -6.0, 0.3, 0.01, 4.0, 0.0, 1.0])
    pruned = prune_delta(delta, 0.3)
    assert pruned.kept.tolist() == [0, 4, 7]
    assert pruned.wire_bytes == 24
    assert pruned.values.tolist() == [5.0, 0, 0, 0, -6.0, 0, 0, 4.0, 0, 0]


def test_prune_ties_go_to_lower_index():
    pruned = prune_delta(np.array([1.0, -1.0, 1.0, 0.5]), 0.5)
    assert pruned.kept.tolist() == [0, 1]


@mark.parametrize(
    "fraction,size,expected",
    (
        param(0.3, 10, 3, id="float-noise-rounded-away"),
        param(0.1, 10, 1, id="exact"),
        param(0.01, 5, 1, id="at-least-one"),
        param(0.99, 3, 3, id="ceiling"),
        param(0.5, 0, 0, id="empty"),
    ),
)
def test_kept_count(fraction, size, expected):
    assert kept_count(fraction, size) == expected


@mark.parametrize("seed", range(10))
def test_prune_partitions_by_magnitude(seed):
    rng = np.random.default_rng(seed)
    delta = rng.normal(size=int(rng.integers(1, 200)))
    fraction = float(rng.uniform(0.01, 0.99))
    pruned = prune_delta(delta, fraction)
    dropped = np.setdiff1d(np.arange(delta.size), pruned.kept)

    assert pruned.kept.size == kept_count(fraction, delta.size)
    assert np.array_equal(pruned.values[pruned.kept], delta[pruned.kept])
    assert not pruned.values[dropped].any()
    if dropped.size:
        assert np.abs(delta[pruned.kept]).min() >= np.abs(delta[dropped]).max()


def sort_oracle(delta, fraction):
    values = delta.tolist()
    order = sorted(range(len(values)), key=lambda i: (-abs(values[i]), i))
    return sorted(order[: kept_count(fraction, len(values))])


@mark.parametrize(
    "size,levels",
    (
        param(1000, None, id="1k-gaussian"),
        param(10_000, None, id="10k-gaussian"),
        param(5000, 3, id="5k-few-levels"),
        param(10_000, 2, id="10k-few-levels"),
        param(10_000, 0, id="10k-all-zero"),
    ),
)
def test_prune_matches_sort_oracle_at_scale(size, levels):
    rng = np.random.default_rng(size)
    if levels is None:
        delta = rng.normal(size=size)
    else:
        delta = rng.integers(-levels, levels + 1, size=size).astype(float)
    for fraction in (0.001, 0.3, 0.75, 0.999):
        pruned = prune_delta(delta, fraction)
        assert pruned.kept.tolist() == sort_oracle(delta, fraction), fraction


@mark.parametrize("fraction", (0.0, 1.0, -0.5, 1.5))
def test_prune_fraction_bounds(fraction):
    with pytest.raises(ValueError):
        prune_delta(np.ones(4), fraction)
