"""
Turns a RunConfig into data, a partition plan and a fleet of simulated clients.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from HyperFedSim.config import RunConfig
from HyperFedSim.data import (
    Dataset,
    PartitionPlan,
    fetch_dataset,
    load_cifar_binary,
    load_idx,
    partition_dirichlet,
    partition_quantity_skew,
    resolve_data_path,
    synth_blobs,
)
from HyperFedSim.engine import SimulatedClient, TrainingSettings
from HyperFedSim.exceptions import DatasetError
from HyperFedSim.models import ArchitectureSpec, get_architecture, with_flags
from HyperFedSim.utils import LOGGER


@dataclass
class Fleet:
    dataset: Dataset
    plan: PartitionPlan
    clients: Dict[int, SimulatedClient]

    @property
    def client_ids(self) -> List[int]:
        return sorted(self.clients)

    def architectures(self) -> Dict[str, ArchitectureSpec]:
        return {client.arch.name: client.arch for client in self.clients.values()}


def _local_file(name: str, url: Optional[str]) -> Path:
    path = resolve_data_path(name)
    if path.exists() or not url:
        return path
    fetched = fetch_dataset(f"{url.rstrip('/')}/{path.name}", path)
    if fetched is None:
        raise DatasetError(f"{path} is missing and could not be fetched from {url}")
    return fetched


def load_dataset(config: RunConfig) -> Dataset:
    spec = config.dataset
    if spec.kind == "blobs":
        return synth_blobs(
            num_classes=spec.num_classes,
            per_class=spec.per_class,
            dim=spec.dim,
            spread=spec.spread,
            seed=config.seed,
            name=spec.name,
        )
    files = [_local_file(name, spec.url) for name in spec.files]
    if spec.kind == "idx":
        if len(files) != 1:
            raise DatasetError("idx datasets take exactly one image file")
        return load_idx(
            files[0],
            _local_file(spec.labels_file, spec.url),
            num_classes=spec.num_classes,
            name=spec.name,
        )
    return load_cifar_binary(files, fine_labels=spec.fine_labels, name=spec.name)


def build_plan(config: RunConfig, dataset: Dataset) -> PartitionPlan:
    partition = config.partition
    if partition.scheme == "noniid1":
        plan = partition_quantity_skew(
            dataset,
            config.fleet.num_clients,
            partition.classes_per_client,
            config.seed,
            strict_coverage=partition.strict_coverage,
            train_fraction=partition.train_fraction,
        )
    else:
        plan = partition_dirichlet(
            dataset,
            config.fleet.num_clients,
            partition.beta,
            config.seed,
            train_fraction=partition.train_fraction,
        )
    plan.validate(len(dataset))
    return plan


def client_architecture(config: RunConfig, dataset: Dataset, client_id: int) -> ArchitectureSpec:
    fleet = config.fleet
    name = fleet.architectures[client_id % len(fleet.architectures)]
    arch = get_architecture(name, dataset.num_classes, dataset.sample_shape)
    known = {layer.name for layer in arch.layers}
    if not (fleet.local_layers or fleet.frozen_layers or fleet.local_norm_layers):
        return arch
    return with_flags(
        arch,
        local=[layer for layer in fleet.local_layers if layer in known],
        frozen=[layer for layer in fleet.frozen_layers if layer in known],
        local_norm=[layer for layer in fleet.local_norm_layers if layer in known],
    )


def training_settings(config: RunConfig) -> TrainingSettings:
    rounds = config.rounds
    return TrainingSettings(
        epochs=rounds.local_epochs,
        batch_size=rounds.batch_size,
        lr=rounds.client_lr,
        momentum=rounds.client_momentum,
        weight_decay=rounds.client_weight_decay,
    )


def build_fleet(
    config: RunConfig, dataset: Optional[Dataset] = None, plan: Optional[PartitionPlan] = None
) -> Fleet:
    dataset = dataset if dataset is not None else load_dataset(config)
    plan = plan if plan is not None else build_plan(config, dataset)
    settings = training_settings(config)
    dtype = np.dtype(config.fleet.dtype)
    clients = {}
    for client_id in range(plan.num_clients):
        clients[client_id] = SimulatedClient(
            client_id=client_id,
            arch=client_architecture(config, dataset, client_id),
            dataset=dataset,
            train_indices=plan.train[client_id],
            test_indices=plan.test[client_id],
            seed=config.seed,
            settings=settings,
            dtype=dtype,
        )
    LOGGER.info(
        "Fleet ready: %s clients over %s (%s samples, %s classes)",
        len(clients),
        dataset.name,
        len(dataset),
        dataset.num_classes,
    )
    return Fleet(dataset=dataset, plan=plan, clients=clients)
