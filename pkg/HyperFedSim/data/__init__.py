# ruff: noqa: F401
from .datasets import (
    Dataset,
    load_cifar_binary,
    load_idx,
    read_idx,
    resolve_data_path,
    synth_blobs,
)
from .fetch import fetch_dataset
from .partition import (
    SCHEMES,
    PartitionPlan,
    largest_remainder,
    partition_dirichlet,
    partition_quantity_skew,
    split_train_test,
)
