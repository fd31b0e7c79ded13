"""
Reference points without a hypernetwork: sample-weighted averaging of one shared model, and
purely local training.
"""
from typing import Any, Dict, Optional

import numpy as np

from HyperFedSim.constants import PHASE_EVAL, PHASE_TRAIN, VALUE_BYTES
from HyperFedSim.engine import LocalResult, MetricRow, RoundMetrics
from HyperFedSim.exceptions import ArchitectureError
from HyperFedSim.models import build_model
from HyperFedSim.utils import make_rng

from .base_runner import BaseRunner


class FedAvgRunner(BaseRunner):
    algorithm = "fedavg"
    PHASES = ("broadcast", "train", "aggregate", "eval")

    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.weights: Optional[np.ndarray] = None

    def setup(self) -> None:
        archs = {self.client(client_id).arch for client_id in self.active}
        if len(archs) != 1:
            raise ArchitectureError(
                f"FedAvg needs one architecture for the whole fleet, got {sorted(a.name for a in archs)}"
            )
        arch = archs.pop()
        model = build_model(arch, make_rng(self.seed, "fedavg-init"), np.dtype(self.config.fleet.dtype))
        self.weights = model.flat().values

    def run_round(self, round_index: int) -> RoundMetrics:
        metrics = RoundMetrics(round_index)
        participants = self.sample(round_index)
        weights = self.weights

        def train(client_id: int) -> LocalResult:
            return self.client(client_id).local_update(weights, round_index)

        with self.timed(metrics, "train"):
            results = self.map_clients(train, participants)
        with self.timed(metrics, "aggregate"):
            total = float(sum(self.client(client_id).num_train for client_id in results))
            aggregate = np.zeros_like(weights)
            for client_id, result in results.items():
                delta, uplink = self.upload(result.delta)
                pruned = self.config.rounds.prune_fraction > 0
                trained = weights + delta if pruned else result.trained
                aggregate += (self.client(client_id).num_train / total) * trained
                metrics.rows.append(
                    MetricRow(
                        round_index,
                        PHASE_TRAIN,
                        client_id,
                        accuracy=result.accuracy,
                        loss=result.loss,
                        uplink_bytes=uplink,
                        downlink_bytes=weights.size * VALUE_BYTES,
                    )
                )
            if results:
                self.weights = aggregate
        if self.should_evaluate(round_index):
            current = self.weights
            self.evaluation_rows(
                metrics, self.active, lambda client_id: self.client(client_id).evaluate(current), PHASE_EVAL
            )
        return metrics

    def state_dict(self) -> Dict[str, Any]:
        state = super().state_dict()
        state["weights"] = self.weights.copy()
        return state

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        super().load_state_dict(state)
        self.weights = np.array(state["weights"], dtype=np.dtype(self.config.fleet.dtype))


class LocalRunner(BaseRunner):
    """Each participant keeps training its own model; nothing is exchanged."""

    algorithm = "local"
    PHASES = ("train", "eval")

    def run_round(self, round_index: int) -> RoundMetrics:
        metrics = RoundMetrics(round_index)

        def train(client_id: int) -> LocalResult:
            client = self.client(client_id)
            return client.local_update(client.model.flat().values, round_index)

        with self.timed(metrics, "train"):
            results = self.map_clients(train, self.sample(round_index))
        for client_id, result in results.items():
            metrics.rows.append(
                MetricRow(round_index, PHASE_TRAIN, client_id, accuracy=result.accuracy, loss=result.loss)
            )
        if self.should_evaluate(round_index):
            self.evaluation_rows(
                metrics, self.active, lambda client_id: self.client(client_id).evaluate(), PHASE_EVAL
            )
        return metrics
