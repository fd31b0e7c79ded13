"""
A simulated client: its data slice, its persistent model instance (which is where local-only
layers live between rounds) and the local training loop.
"""
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from HyperFedSim.constants import (
    BATCH_SIZE,
    CLIENT_LR,
    CLIENT_MOMENTUM,
    CLIENT_WEIGHT_DECAY,
    LOCAL_EPOCHS,
)
from HyperFedSim.data import Dataset
from HyperFedSim.kernel import SgdState
from HyperFedSim.models import (
    ArchitectureSpec,
    Model,
    build_model,
    flat_param_count,
    local_train_step,
)
from HyperFedSim.models.network import Objective
from HyperFedSim.utils import LOGGER, make_rng

from .evaluation import evaluate

OWN_SLOT = "own"
GLOBAL_SLOT = "global"


@dataclass(frozen=True)
class TrainingSettings:
    epochs: int = LOCAL_EPOCHS
    batch_size: int = BATCH_SIZE
    lr: float = CLIENT_LR
    momentum: float = CLIENT_MOMENTUM
    weight_decay: float = CLIENT_WEIGHT_DECAY

    def optimizer(self) -> SgdState:
        return SgdState(lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay)


class LocalResult(NamedTuple):
    trained: np.ndarray
    delta: np.ndarray
    loss: float
    accuracy: float


class SimulatedClient:
    """
    :param client_id: Client id, also the seed component for its batching streams.
    :param arch: The client's own architecture (flags included).
    :param dataset: Shared dataset; the client only reads its own indices.
    :param train_indices: Training split.
    :param test_indices: Test split.
    :param seed: Run master seed.
    :param settings: Local training hyperparameters.
    """

    def __init__(
        self,
        client_id: int,
        arch: ArchitectureSpec,
        dataset: Dataset,
        train_indices: Sequence[int],
        test_indices: Sequence[int],
        seed: int,
        settings: TrainingSettings = TrainingSettings(),
        dtype=np.float64,
    ) -> None:
        self.client_id = client_id
        self.arch = arch
        self.seed = seed
        self.settings = settings
        self.dtype = np.dtype(dtype)
        self.train_x, self.train_y = dataset.subset(train_indices)
        self.test_x, self.test_y = dataset.subset(test_indices)
        self.train_x = self.train_x.astype(self.dtype, copy=False)
        self.test_x = self.test_x.astype(self.dtype, copy=False)
        self.model = build_model(arch, make_rng(seed, "client-init", client_id), self.dtype)
        self._aux_models: Dict[str, Model] = {}

    @property
    def num_train(self) -> int:
        return int(self.train_y.size)

    @property
    def parameter_count(self) -> int:
        return flat_param_count(self.arch)

    @property
    def has_test_data(self) -> bool:
        return self.test_y.size > 0

    def model_for(self, arch: Optional[ArchitectureSpec] = None) -> Model:
        """
        The client's own model when ``arch`` is None, otherwise its separate copy of the
        global architecture. The two never share an instance.
        """
        if arch is None:
            return self.model
        aux = self._aux_models.get(GLOBAL_SLOT)
        if aux is None or aux.arch != arch:
            aux = build_model(
                arch, make_rng(self.seed, "client-init", self.client_id, GLOBAL_SLOT), self.dtype
            )
            self._aux_models[GLOBAL_SLOT] = aux
        return aux

    def _batches(self, round_index: int, epoch: int, phase: str) -> List[np.ndarray]:
        rng = make_rng(self.seed, "batching", round_index, self.client_id, epoch, phase)
        order = rng.permutation(self.num_train)
        size = self.settings.batch_size
        return [order[start : start + size] for start in range(0, order.size, size)]

    def local_update(
        self,
        served: np.ndarray,
        round_index: int,
        arch: Optional[ArchitectureSpec] = None,
        objective: Optional[Objective] = None,
        phase: str = "personal",
    ) -> LocalResult:
        """
        Loads the served parameters, trains E epochs of SGD with a fresh optimizer and returns
        the trained vector and the delta ``trained - served``.
        """
        model = self.model_for(arch)
        served = np.asarray(served, dtype=self.dtype)
        model.load_flat(served)
        state = self.settings.optimizer()
        loss_sum, correct, seen = 0.0, 0, 0
        for epoch in range(self.settings.epochs):
            for batch in self._batches(round_index, epoch, phase):
                step = local_train_step(
                    model, self.train_x[batch], self.train_y[batch], state, objective
                )
                loss_sum += step.loss * batch.size
                correct += step.correct
                seen += batch.size
        trained = model.flat().values
        LOGGER.debug(
            "Client %s finished %s phase of round %s over %s samples",
            self.client_id,
            phase,
            round_index,
            seen,
        )
        return LocalResult(
            trained=trained,
            delta=trained - served,
            loss=loss_sum / seen if seen else 0.0,
            accuracy=correct / seen if seen else 0.0,
        )

    def evaluate(self, params: Optional[np.ndarray] = None, arch: Optional[ArchitectureSpec] = None):
        """
        Test accuracy and loss of the client's model, after loading ``params`` when given.
        """
        model = self.model_for(arch)
        if params is not None:
            model.load_flat(np.asarray(params, dtype=self.dtype))
        return evaluate(model, self.test_x, self.test_y)

    def snapshot(self) -> Dict[str, Dict[str, np.ndarray]]:
        models = {OWN_SLOT: self.model, **self._aux_models}
        return {slot: {k: v.copy() for k, v in m.params.items()} for slot, m in models.items()}

    def restore(
        self,
        snapshot: Dict[str, Dict[str, np.ndarray]],
        global_arch: Optional[ArchitectureSpec] = None,
    ) -> None:
        for slot, params in snapshot.items():
            params = {k: np.array(v, dtype=self.dtype) for k, v in params.items()}
            if slot == OWN_SLOT:
                self.model = Model(self.arch, params)
            elif global_arch is not None:
                self._aux_models[slot] = Model(global_arch, params)
