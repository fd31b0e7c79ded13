import math
from typing import Any, Dict, List

import numpy as np

from HyperFedSim.cache import FileCheckpointStore
from HyperFedSim.constants import (
    CKPT_HYPERNET,
    PHASE_EVAL_HELDOUT,
    PHASE_EVAL_TRAIN,
    SDK_NAME,
)
from HyperFedSim.engine import RoundMetrics
from HyperFedSim.exceptions import CheckpointError
from HyperFedSim.utils import LOGGER, make_rng

from .hypernet_runner import MHPFedHNRunner, build_hypernet


class GeneralizationRunner(MHPFedHNRunner):
    """
    Trains the hypernetwork on most of the fleet, then freezes it and fits clients it has never
    seen.

    Rounds ``1..R`` are ordinary personalized rounds over the training clients (skipped when a
    pretrained checkpoint is given). From round ``R + 1`` on, the hypernetwork is frozen in
    ``mode``, the held-out clients are registered and only they train. ``embeddings-only`` fits
    their embedding rows alone; ``new-head`` also fits fresh heads for their chunk counts.

    :param mode: Overrides the configured freeze mode.
    """

    algorithm = "generalization"
    PHASES = ("serve", "train", "update", "eval", "freeze", "eval-train", "eval-heldout")

    def __init__(self, *args, mode: str = None, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        rounds = self.config.rounds
        self.mode = mode or rounds.generalization_mode
        clients = self.fleet.client_ids
        count = min(len(clients) - 1, math.ceil(round(rounds.holdout_fraction * len(clients), 9)))
        if count < 1:
            raise ValueError("generalization needs at least two clients")
        order = make_rng(self.seed, "holdout").permutation(np.asarray(clients))
        self.heldout: List[int] = sorted(int(cid) for cid in order[:count])
        self.train_clients: List[int] = sorted(int(cid) for cid in order[count:])
        self.active = list(self.train_clients)
        self.pretraining_rounds = 0 if rounds.pretrained else rounds.rounds

    @property
    def total_rounds(self) -> int:
        return self.pretraining_rounds + self.config.rounds.generalization_rounds

    def setup(self) -> None:
        pretrained = self.config.rounds.pretrained
        if not pretrained:
            super().setup()
            return
        store = FileCheckpointStore(SDK_NAME, directory=pretrained)
        store.check_compatible()
        state = store.get(CKPT_HYPERNET)
        if state is None:
            raise CheckpointError(f"{pretrained} holds no hypernetwork state")
        self.hypernet = build_hypernet(self.config)
        self.hypernet.load_state_dict(state)
        known = set(self.hypernet.clients)
        if known.intersection(self.heldout):
            raise CheckpointError("the pretrained hypernetwork has already seen held-out clients")
        self.active = [cid for cid in self.train_clients if cid in known]
        LOGGER.info("Loaded pretrained hypernetwork from %s (%s clients)", pretrained, len(known))

    def describe(self) -> List[str]:
        return [
            f"{self.algorithm} ({self.mode}): {self.pretraining_rounds} training rounds over "
            f"{len(self.train_clients)} clients, then {self.config.rounds.generalization_rounds} "
            f"rounds over {len(self.heldout)} held-out clients",
            *[f"  phase {phase}" for phase in self.PHASES],
        ]

    def freeze(self) -> None:
        handle = self.hypernet.freeze_for_generalization(self.mode)
        self.register(self.heldout)
        LOGGER.info(
            "Registered %s held-out clients after freezing %s tensors",
            len(self.heldout),
            len(handle.frozen),
        )

    def run_round(self, round_index: int) -> RoundMetrics:
        if round_index <= self.pretraining_rounds:
            return super().run_round(round_index)
        if self.hypernet.freeze_mode is None:
            self.freeze()
        metrics = RoundMetrics(round_index)
        self.personal_phase(metrics, self.sample(round_index, self.heldout, "heldout-participants"))
        if self.should_evaluate(round_index):
            self.evaluate_personalized(metrics, self.heldout, PHASE_EVAL_HELDOUT)
            self.evaluate_personalized(metrics, self.active, PHASE_EVAL_TRAIN)
        return metrics

    def state_dict(self) -> Dict[str, Any]:
        state = super().state_dict()
        state["heldout"] = list(self.heldout)
        return state

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        super().load_state_dict(state)
        self.heldout = list(state["heldout"])

