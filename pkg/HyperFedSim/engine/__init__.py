# ruff: noqa: F401
from .client import LocalResult, SimulatedClient, TrainingSettings
from .evaluation import evaluate
from .metrics import (
    MetricRow,
    MetricsSink,
    RoundMetrics,
    count_rows,
    read_rows,
    truncate_rows,
)
from .pruning import PrunedDelta, kept_count, prune_delta
