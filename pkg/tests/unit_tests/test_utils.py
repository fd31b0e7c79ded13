import numpy as np
import pytest
from pytest import mark, param

from HyperFedSim.exceptions import NonFiniteError
from HyperFedSim.utils import check_finite, chunk_count, derive_seed, make_rng, participant_count


def test_derive_seed_is_stable():
    assert derive_seed(7, "participants", 3) == derive_seed(7, "participants", 3)
    assert 0 <= derive_seed(7, "participants", 3) < 2**32


def test_derive_seed_separates_streams():
    seeds = {
        derive_seed(7, "participants", 3),
        derive_seed(7, "participants", 4),
        derive_seed(7, "batching", 3),
        derive_seed(8, "participants", 3),
    }
    assert len(seeds) == 4


def test_master_seed_wraps_to_32_bits():
    assert derive_seed(2**32 + 5, "init") == derive_seed(5, "init")


def test_make_rng_replays():
    first = make_rng(1, "embedding", "embedding.0").normal(size=5)
    second = make_rng(1, "embedding", "embedding.0").normal(size=5)
    assert np.array_equal(first, second)


@mark.parametrize(
    "parameter_count,output_dim,expected",
    (
        param(1, 64, 1, id="single"),
        param(64, 64, 1, id="exact"),
        param(65, 64, 2, id="spill"),
        param(239856, 3072, 79, id="lenet"),
    ),
)
def test_chunk_count(parameter_count, output_dim, expected):
    tau = chunk_count(parameter_count, output_dim)
    assert tau == expected
    assert (tau - 1) * output_dim < parameter_count <= tau * output_dim


@mark.parametrize(
    "ratio,population,expected",
    (
        param(1.0, 4, 4, id="all"),
        param(0.5, 4, 2, id="half"),
        param(0.1, 4, 1, id="at-least-one"),
        param(0.3, 10, 3, id="float-noise"),
        param(0.1, 100, 10, id="tenth"),
    ),
)
def test_participant_count(ratio, population, expected):
    assert participant_count(ratio, population) == expected


@mark.parametrize("bad", (np.nan, np.inf, -np.inf))
def test_check_finite(bad):
    check_finite("ok", np.zeros(3), np.ones(2))
    with pytest.raises(NonFiniteError, match="hypernetwork"):
        check_finite("hypernetwork", np.zeros(3), np.array([1.0, bad]))
