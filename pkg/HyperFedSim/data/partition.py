"""
Non-IID client partitions: quantity-based label skew and Dirichlet distribution skew, followed by
a per-client stratified train/test split.
"""
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import numpy as np

from HyperFedSim.constants import TRAIN_FRACTION
from HyperFedSim.exceptions import PartitionError
from HyperFedSim.utils import LOGGER, make_rng

from .datasets import Dataset

SCHEMES = ("noniid1", "noniid2")
ALPHA_RANGE = (0.4, 0.6)


@dataclass
class PartitionPlan:
    """
    Per-client train and test index lists into one dataset.
    """

    scheme: str
    seed: int
    train: List[List[int]]
    test: List[List[int]]
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def num_clients(self) -> int:
        return len(self.train)

    def client_indices(self, client_id: int) -> List[int]:
        return sorted(self.train[client_id] + self.test[client_id])

    def label_sets(self, dataset: Dataset) -> List[List[int]]:
        return [
            sorted({int(label) for label in dataset.labels[self.client_indices(client)]})
            for client in range(self.num_clients)
        ]

    def validate(self, dataset_size: int) -> None:
        seen = set()
        for client in range(self.num_clients):
            train, test = set(self.train[client]), set(self.test[client])
            if train & test:
                raise PartitionError(f"client {client} has overlapping train and test indices")
            owned = train | test
            if seen & owned:
                raise PartitionError(f"client {client} shares samples with another client")
            if owned and (min(owned) < 0 or max(owned) >= dataset_size):
                raise PartitionError(f"client {client} holds indices outside the dataset")
            seen |= owned

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "PartitionPlan":
        return cls(
            scheme=document["scheme"],
            seed=int(document["seed"]),
            train=[[int(i) for i in row] for row in document["train"]],
            test=[[int(i) for i in row] for row in document["test"]],
            params=dict(document.get("params", {})),
        )

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf8") as plan_file:
            json.dump(self.to_dict(), plan_file, sort_keys=True)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PartitionPlan":
        with open(path, "r", encoding="utf8") as plan_file:
            return cls.from_dict(json.load(plan_file))


def largest_remainder(weights: Sequence[float], total: int) -> np.ndarray:
    """
    Integer counts summing to ``total`` in proportion to ``weights``; leftover units go to the
    largest fractional parts, lower index first on ties.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if total == 0 or weights.size == 0:
        return np.zeros(weights.size, dtype=np.int64)
    raw = weights / weights.sum() * total
    counts = np.floor(raw).astype(np.int64)
    leftover = int(total - counts.sum())
    if leftover:
        order = sorted(range(weights.size), key=lambda i: (-(raw[i] - counts[i]), i))
        for i in order[:leftover]:
            counts[i] += 1
    return counts


def split_train_test(
    dataset: Dataset,
    client_indices: Sequence[List[int]],
    seed: int,
    train_fraction: float = TRAIN_FRACTION,
) -> Dict[str, List[List[int]]]:
    """
    Stratified per-client split: ``round-half-up(fraction * n)`` training samples, spread over the
    client's labels by largest remainder.
    """
    train, test = [], []
    for client, indices in enumerate(client_indices):
        rng = make_rng(seed, "split", client)
        indices = np.asarray(sorted(indices), dtype=np.int64)
        total_train = int(math.floor(train_fraction * indices.size + 0.5))
        labels = dataset.labels[indices]
        classes = np.unique(labels)
        per_label = [indices[labels == label] for label in classes]
        quota = largest_remainder([rows.size for rows in per_label], total_train)
        client_train: List[int] = []
        client_test: List[int] = []
        for rows, count in zip(per_label, quota):
            rows = rng.permutation(rows)
            count = min(int(count), rows.size)
            client_train.extend(int(i) for i in rows[:count])
            client_test.extend(int(i) for i in rows[count:])
        train.append(sorted(client_train))
        test.append(sorted(client_test))
    return {"train": train, "test": test}


def _assign_classes(
    rng: np.random.Generator, num_classes: int, n_clients: int, classes_per_client: int
) -> List[List[int]]:
    chosen = [
        sorted(int(c) for c in rng.choice(num_classes, classes_per_client, replace=False))
        for _ in range(n_clients)
    ]
    holders = np.zeros(num_classes, dtype=np.int64)
    for classes in chosen:
        holders[classes] += 1

    cursor = 0
    for missing in [c for c in range(num_classes) if holders[c] == 0]:
        for step in range(n_clients):
            client = (cursor + step) % n_clients
            spare = [c for c in chosen[client] if holders[c] >= 2]
            if spare:
                swapped = spare[0]
                chosen[client] = sorted([c for c in chosen[client] if c != swapped] + [missing])
                holders[swapped] -= 1
                holders[missing] += 1
                cursor = client + 1
                LOGGER.warning(
                    "Class %s was picked by no client; swapped it for class %s at client %s",
                    missing,
                    swapped,
                    client,
                )
                break
        else:
            LOGGER.warning("Class %s stays unallocated: no client can give up a class", missing)
    return chosen


def partition_quantity_skew(
    dataset: Dataset,
    n_clients: int,
    classes_per_client: int,
    seed: int,
    strict_coverage: bool = False,
    train_fraction: float = TRAIN_FRACTION,
) -> PartitionPlan:
    """
    Each client draws ``classes_per_client`` distinct labels; every class is then shared among
    its holders in proportion to per-(client, class) weights drawn from U(0.4, 0.6).
    """
    num_classes = dataset.num_classes
    if n_clients < 1:
        raise PartitionError("need at least one client")
    if not 1 <= classes_per_client <= num_classes:
        raise PartitionError(
            f"classes_per_client must lie in [1, {num_classes}], got {classes_per_client}"
        )
    if strict_coverage and n_clients * classes_per_client < num_classes:
        raise PartitionError(
            f"{n_clients} clients x {classes_per_client} classes cannot cover {num_classes} classes"
        )

    rng = make_rng(seed, "partition", "noniid1")
    chosen = _assign_classes(rng, num_classes, n_clients, classes_per_client)
    alphas = rng.uniform(*ALPHA_RANGE, size=(n_clients, num_classes))

    owned: List[List[int]] = [[] for _ in range(n_clients)]
    uncovered = []
    for label in range(num_classes):
        rows = np.flatnonzero(dataset.labels == label)
        holders = [client for client in range(n_clients) if label in chosen[client]]
        if not holders:
            if rows.size:
                uncovered.append(label)
            continue
        rows = rng.permutation(rows)
        counts = largest_remainder(alphas[holders, label], rows.size)
        start = 0
        for client, count in zip(holders, counts):
            owned[client].extend(int(i) for i in rows[start : start + count])
            start += int(count)
    if uncovered and strict_coverage:
        raise PartitionError(f"classes {uncovered} could not be allocated to any client")

    split = split_train_test(dataset, owned, seed, train_fraction)
    return PartitionPlan(
        scheme="noniid1",
        seed=seed,
        train=split["train"],
        test=split["test"],
        params={"classes_per_client": classes_per_client, "train_fraction": train_fraction},
    )


def partition_dirichlet(
    dataset: Dataset,
    n_clients: int,
    beta: float,
    seed: int,
    train_fraction: float = TRAIN_FRACTION,
) -> PartitionPlan:
    """
    Per class, client shares follow Dir(beta). Clients left without samples take one sample from
    the currently largest client.
    """
    if beta <= 0:
        raise PartitionError(f"Dirichlet concentration must be positive, got {beta}")
    if n_clients < 1:
        raise PartitionError("need at least one client")
    if n_clients > len(dataset):
        raise PartitionError(f"{n_clients} clients cannot each hold one of {len(dataset)} samples")

    rng = make_rng(seed, "partition", "noniid2")
    owned: List[List[int]] = [[] for _ in range(n_clients)]
    for label in range(dataset.num_classes):
        rows = np.flatnonzero(dataset.labels == label)
        if rows.size == 0:
            continue
        rows = rng.permutation(rows)
        shares = rng.dirichlet(np.full(n_clients, beta))
        if not np.all(np.isfinite(shares)) or shares.sum() <= 0:
            # Every gamma draw underflowed; the limit of Dir(beta -> 0) is a single winner.
            shares = np.zeros(n_clients)
            shares[int(rng.integers(n_clients))] = 1.0
        counts = largest_remainder(shares, rows.size)
        start = 0
        for client, count in enumerate(counts):
            owned[client].extend(int(i) for i in rows[start : start + count])
            start += int(count)

    for client in range(n_clients):
        if not owned[client]:
            donor = max(range(n_clients), key=lambda c: (len(owned[c]), -c))
            owned[client].append(owned[donor].pop())
            LOGGER.warning("Client %s drew no samples; took one from client %s", client, donor)

    split = split_train_test(dataset, owned, seed, train_fraction)
    return PartitionPlan(
        scheme="noniid2",
        seed=seed,
        train=split["train"],
        test=split["test"],
        params={"beta": beta, "train_fraction": train_fraction},
    )
