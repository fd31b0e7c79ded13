import logging
import math
from typing import Union

import mmh3  # pylint: disable=import-error
import numpy as np
from requests import Response

from HyperFedSim.exceptions import NonFiniteError

LOGGER = logging.getLogger("HyperFedSim")

SeedPart = Union[str, int]


def derive_seed(master_seed: int, *parts: SeedPart) -> int:
    """
    Fans a master seed out into a named sub-seed.

    The same (master seed, parts) always yields the same 32-bit seed, so stages such as
    partitioning, initialization, sampling and batching can be replayed in isolation.

    :param master_seed: Run-level seed.
    :param parts: Stage name followed by any identifying integers (round, client id, epoch...).
    :return: Unsigned 32-bit seed.
    """
    key = ":".join(str(part) for part in parts)
    return mmh3.hash(key, signed=False, seed=master_seed % 2**32)


def make_rng(master_seed: int, *parts: SeedPart) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *parts))


def chunk_count(parameter_count: int, output_dim: int) -> int:
    # Smallest tau with (tau - 1) * N < K <= tau * N.
    return -(-parameter_count // output_dim)


def participant_count(ratio: float, population: int) -> int:
    return max(1, math.ceil(round(ratio * population, 9)))


def check_finite(name: str, *arrays: np.ndarray) -> None:
    for array in arrays:
        if not np.all(np.isfinite(array)):
            raise NonFiniteError(f"Non-finite values produced by {name}.")


def log_resp_info(resp: Response) -> None:
    LOGGER.debug("HTTP status code: %s", resp.status_code)
    LOGGER.debug("HTTP headers: %s", resp.headers)
