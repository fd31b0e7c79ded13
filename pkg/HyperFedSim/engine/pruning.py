import math
from typing import NamedTuple

import numpy as np

from HyperFedSim.constants import INDEX_BYTES, VALUE_BYTES


class PrunedDelta(NamedTuple):
    values: np.ndarray
    kept: np.ndarray

    @property
    def wire_bytes(self) -> int:
        # Sent as (index, value) pairs.
        return int(self.kept.size) * (INDEX_BYTES + VALUE_BYTES)


def kept_count(fraction: float, size: int) -> int:
    return min(size, math.ceil(round(fraction * size, 9)))


def prune_delta(delta: np.ndarray, fraction: float) -> PrunedDelta:
    """
    Keeps the ``ceil(fraction * K)`` entries of largest magnitude and zeroes the rest.
    Ties go to the lower index.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"prune fraction must lie in (0, 1), got {fraction}")
    delta = np.asarray(delta)
    count = kept_count(fraction, delta.size)
    order = np.argsort(-np.abs(delta), kind="stable")
    kept = np.sort(order[:count])
    pruned = np.zeros_like(delta)
    pruned[kept] = delta[kept]
    return PrunedDelta(values=pruned, kept=kept)
