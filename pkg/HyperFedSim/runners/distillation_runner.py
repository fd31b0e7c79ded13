import math
from typing import Dict, FrozenSet, List, Optional

import numpy as np

from HyperFedSim.constants import PHASE_EVAL, PHASE_GLOBAL, VALUE_BYTES
from HyperFedSim.engine import LocalResult, MetricRow, RoundMetrics
from HyperFedSim.models import (
    ArchitectureSpec,
    DistillationObjective,
    Model,
    build_model,
    flat_param_count,
    get_architecture,
)
from HyperFedSim.models.network import Objective
from HyperFedSim.utils import LOGGER, make_rng

from .hypernet_runner import MHPFedHNRunner


class MHPFedHNGDRunner(MHPFedHNRunner):
    """
    Two phases per round. Deployed participants first train the lightweight global model and the
    hypernetwork takes one sample-weighted step at the global slot. Then every participant trains
    its personalized model, distilling from the global parameters generated at the start of the
    round when it hosts the global model.
    """

    algorithm = "mh-pfedhngd"
    PHASES = ("generate-global", "global-train", "global-update", "serve", "train", "update", "eval")

    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.deployed: FrozenSet[int] = frozenset()
        self._teacher: Optional[Model] = None

    @property
    def lam(self) -> float:
        return self.config.rounds.lam

    @property
    def temperature(self) -> float:
        return self.config.rounds.temperature

    def select_global_architecture(self) -> ArchitectureSpec:
        name = self.config.fleet.global_architecture
        if name is not None:
            dataset = self.fleet.dataset
            return get_architecture(name, dataset.num_classes, dataset.sample_shape)
        smallest = min(self.active, key=lambda cid: (self.client(cid).parameter_count, cid))
        return self.client(smallest).arch

    def select_deployed(self) -> FrozenSet[int]:
        ratio = self.config.rounds.deployment_ratio
        count = min(len(self.active), math.ceil(round(ratio * len(self.active), 9)))
        order = make_rng(self.seed, "deployment").permutation(np.asarray(self.active))
        return frozenset(int(client_id) for client_id in order[:count])

    def setup(self) -> None:
        super().setup()
        self.global_arch = self.select_global_architecture()
        slot = self.hypernet.configure_global(flat_param_count(self.global_arch))
        self.deployed = self.select_deployed()
        LOGGER.info(
            "Global model %s with K_g=%s deployed on %s of %s clients",
            self.global_arch.name,
            slot.parameter_count,
            len(self.deployed),
            len(self.active),
        )

    def describe(self) -> List[str]:
        lines = super().describe()
        lines.append(f"  lambda {self.lam}, temperature {self.temperature}, {len(self.deployed)} deployed clients")
        return lines

    def objective_for(self, client_id: int, round_index: int) -> Optional[Objective]:
        if self._teacher is None or client_id not in self.deployed:
            return None
        return DistillationObjective(self._teacher, self.lam, self.temperature)

    def global_phase(self, metrics: RoundMetrics, participants: List[int], global_params: np.ndarray) -> None:
        round_index = metrics.round_index

        def train(client_id: int) -> LocalResult:
            return self.client(client_id).local_update(
                global_params, round_index, arch=self.global_arch, phase=PHASE_GLOBAL
            )

        with self.timed(metrics, "global-train"):
            results = self.map_clients(train, participants)
        updates = []
        with self.timed(metrics, "global-update"):
            # Pruning applies to personal deltas only; the global slot is sent dense.
            for client_id, result in results.items():
                updates.append((client_id, result.delta, self.client(client_id).num_train))
                metrics.rows.append(
                    MetricRow(
                        round_index,
                        PHASE_GLOBAL,
                        client_id,
                        accuracy=result.accuracy,
                        loss=result.loss,
                        uplink_bytes=result.delta.size * VALUE_BYTES,
                        downlink_bytes=global_params.size * VALUE_BYTES,
                    )
                )
            self.hypernet.apply_global_update(updates)

    def run_round(self, round_index: int) -> RoundMetrics:
        metrics = RoundMetrics(round_index)
        participants = self.sample(round_index)
        if self.config.rounds.independent_phase_sampling:
            global_pool = self.sample(round_index, stream="global-participants")
        else:
            global_pool = participants
        global_participants = [cid for cid in global_pool if cid in self.deployed]
        needs_teacher = self.lam < 1.0 and any(cid in self.deployed for cid in participants)

        self._teacher = None
        extra_downlink: Dict[int, int] = {}
        if global_participants or needs_teacher:
            with self.timed(metrics, "generate-global"):
                global_params = self.hypernet.generate_global()
            if needs_teacher:
                teacher = build_model(
                    self.global_arch, make_rng(self.seed, "teacher"), np.dtype(self.config.fleet.dtype)
                )
                teacher.load_flat(global_params)
                self._teacher = teacher
                extra_downlink = {
                    cid: global_params.size * VALUE_BYTES
                    for cid in participants
                    if cid in self.deployed and cid not in global_participants
                }
            if global_participants:
                self.global_phase(metrics, global_participants, global_params)

        self.personal_phase(metrics, participants, extra_downlink)
        self._teacher = None
        if self.should_evaluate(round_index):
            self.evaluate_personalized(metrics, self.active, PHASE_EVAL)
        return metrics


class MHPFedHNGRunner(MHPFedHNGDRunner):
    """The two-phase round without distillation: personalized training is plain cross-entropy."""

    algorithm = "mh-pfedhng"

    @property
    def lam(self) -> float:
        return 1.0
