"""
Personalized rounds driven by the hypernetwork: serve generated parameters, train locally, feed
each client's delta back through the hypernetwork one client at a time.
"""
from typing import Dict, Optional, Sequence

import numpy as np

from HyperFedSim.config import RunConfig
from HyperFedSim.constants import PHASE_EVAL, PHASE_TRAIN, VALUE_BYTES
from HyperFedSim.engine import LocalResult, MetricRow, RoundMetrics
from HyperFedSim.hypernet import Hypernetwork
from HyperFedSim.models.network import Objective

from .base_runner import BaseRunner


def build_hypernet(config: RunConfig) -> Hypernetwork:
    settings = config.hypernet
    return Hypernetwork(
        output_dim=settings.output_dim,
        embedding_dim=settings.embedding_dim,
        hidden_dim=settings.hidden_dim,
        hidden_layers=settings.hidden_layers,
        grouping=settings.grouping,
        no_head=settings.no_head,
        share_embeddings=settings.share_embeddings,
        learning_rate=settings.lr,
        seed=config.seed,
        dtype=np.dtype(config.fleet.dtype),
    )


class MHPFedHNRunner(BaseRunner):
    algorithm = "mh-pfedhn"
    PHASES = ("serve", "train", "update", "eval")

    def setup(self) -> None:
        self.hypernet = build_hypernet(self.config)
        self.register(self.active)

    def register(self, client_ids: Sequence[int]) -> None:
        # The server learns K and nothing else about a client's model.
        for client_id in client_ids:
            client = self.client(client_id)
            self.hypernet.register_client(
                client_id, client.parameter_count, num_layers=client.arch.depth
            )

    def objective_for(self, client_id: int, round_index: int) -> Optional[Objective]:
        return None

    def personal_phase(
        self,
        metrics: RoundMetrics,
        participants: Sequence[int],
        extra_downlink: Optional[Dict[int, int]] = None,
    ) -> Dict[int, LocalResult]:
        """
        Serves every participant from the same hypernetwork state, trains them, then applies their
        updates in ascending id order.
        """
        round_index = metrics.round_index
        extra_downlink = extra_downlink or {}
        self.hypernet.begin_round(round_index)
        with self.timed(metrics, "serve"):
            served = {client_id: self.hypernet.serve(client_id) for client_id in participants}

        def train(client_id: int) -> LocalResult:
            return self.client(client_id).local_update(
                served[client_id],
                round_index,
                objective=self.objective_for(client_id, round_index),
            )

        with self.timed(metrics, "train"):
            results = self.map_clients(train, participants)
        with self.timed(metrics, "update"):
            for client_id, result in results.items():
                delta, uplink = self.upload(result.delta)
                self.hypernet.apply_personal_update(client_id, delta)
                metrics.rows.append(
                    MetricRow(
                        round_index,
                        PHASE_TRAIN,
                        client_id,
                        accuracy=result.accuracy,
                        loss=result.loss,
                        uplink_bytes=uplink,
                        downlink_bytes=served[client_id].size * VALUE_BYTES
                        + extra_downlink.get(client_id, 0),
                    )
                )
        return results

    def evaluate_personalized(self, metrics: RoundMetrics, client_ids: Sequence[int], phase: str) -> None:
        generated = {client_id: self.hypernet.client_params(client_id) for client_id in client_ids}
        self.evaluation_rows(
            metrics,
            client_ids,
            lambda client_id: self.client(client_id).evaluate(generated[client_id]),
            phase,
        )

    def run_round(self, round_index: int) -> RoundMetrics:
        metrics = RoundMetrics(round_index)
        self.personal_phase(metrics, self.sample(round_index))
        if self.should_evaluate(round_index):
            self.evaluate_personalized(metrics, self.active, PHASE_EVAL)
        return metrics
