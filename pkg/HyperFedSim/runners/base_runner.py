import time
from abc import ABC, abstractmethod
from concurrent.futures import Executor
from contextlib import contextmanager
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from HyperFedSim.config import RunConfig
from HyperFedSim.constants import PHASE_EVAL, VALUE_BYTES
from HyperFedSim.engine import MetricRow, RoundMetrics, SimulatedClient, prune_delta
from HyperFedSim.hypernet import Hypernetwork
from HyperFedSim.models import ArchitectureSpec
from HyperFedSim.utils import LOGGER, make_rng, participant_count

from .fleet import Fleet

T = TypeVar("T")


class BaseRunner(ABC):
    """
    Drives one algorithm over a fleet, one round at a time.

    :param config: Resolved run configuration.
    :param fleet: Clients, data and partition plan.
    :param executor: Optional pool for client-side work. Server-side mutation always happens
        on the calling thread, in ascending client id order.
    """

    algorithm = ""
    PHASES: Tuple[str, ...] = ()

    def __init__(self, config: RunConfig, fleet: Fleet, executor: Optional[Executor] = None):
        self.config = config
        self.fleet = fleet
        self.executor = executor
        self.active: List[int] = fleet.client_ids
        self.hypernet: Optional[Hypernetwork] = None
        self.global_arch: Optional[ArchitectureSpec] = None

    @property
    def total_rounds(self) -> int:
        return self.config.rounds.rounds

    @property
    def seed(self) -> int:
        return self.config.seed

    def client(self, client_id: int) -> SimulatedClient:
        return self.fleet.clients[client_id]

    def setup(self) -> None:
        """Builds server-side state. Called once before the first round (and before a restore)."""

    @abstractmethod
    def run_round(self, round_index: int) -> RoundMetrics:
        pass

    def rounds(self, start: int = 1) -> Iterator[RoundMetrics]:
        for round_index in range(start, self.total_rounds + 1):
            metrics = self.run_round(round_index)
            LOGGER.info(
                "%s round %s/%s done, mean accuracy %s",
                self.algorithm,
                round_index,
                self.total_rounds,
                metrics.accuracy(),
            )
            yield metrics

    def describe(self) -> List[str]:
        """Planned phases, one line each, for a dry run."""
        count = participant_count(self.config.rounds.participation, len(self.active))
        return [
            f"{self.algorithm}: {self.total_rounds} rounds over {len(self.active)} clients, "
            f"{count} sampled per round, evaluation every {self.config.rounds.eval_every}",
            *[f"  phase {phase}" for phase in self.PHASES],
        ]

    # Round helpers
    def sample(
        self,
        round_index: int,
        population: Optional[Sequence[int]] = None,
        stream: str = "participants",
    ) -> List[int]:
        """
        Uniform sample without replacement of ``ceil(c * n)`` client ids, sorted ascending.
        """
        population = list(self.active if population is None else population)
        if not population:
            return []
        count = participant_count(self.config.rounds.participation, len(population))
        if count >= len(population):
            return sorted(population)
        chosen = make_rng(self.seed, stream, round_index).choice(
            np.asarray(population), size=count, replace=False
        )
        return sorted(int(client_id) for client_id in chosen)

    def map_clients(self, work: Callable[[int], T], client_ids: Sequence[int]) -> Dict[int, T]:
        """
        Runs ``work`` per client, on the executor when there is one. Results come back keyed by id.
        """
        client_ids = sorted(client_ids)
        if self.executor is None:
            return {client_id: work(client_id) for client_id in client_ids}
        futures = {client_id: self.executor.submit(work, client_id) for client_id in client_ids}
        return {client_id: futures[client_id].result() for client_id in client_ids}

    def should_evaluate(self, round_index: int) -> bool:
        return round_index % self.config.rounds.eval_every == 0 or round_index == self.total_rounds

    def upload(self, delta: np.ndarray) -> Tuple[np.ndarray, int]:
        """
        What the server receives for a delta and what it costs on the wire.
        """
        fraction = self.config.rounds.prune_fraction
        if fraction > 0:
            pruned = prune_delta(delta, fraction)
            return pruned.values, pruned.wire_bytes
        return delta, delta.size * VALUE_BYTES

    @contextmanager
    def timed(self, metrics: RoundMetrics, phase: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            metrics.timings[phase] = metrics.timings.get(phase, 0.0) + time.perf_counter() - start

    def evaluation_rows(
        self,
        metrics: RoundMetrics,
        client_ids: Sequence[int],
        evaluate: Callable[[int], Tuple[float, float]],
        phase: str = PHASE_EVAL,
    ) -> None:
        """
        Appends one evaluation row per client with test data, then the phase's mean row.
        """
        evaluated = [cid for cid in client_ids if self.client(cid).has_test_data]
        with self.timed(metrics, phase):
            results = self.map_clients(evaluate, evaluated)
        for client_id, (accuracy, loss) in results.items():
            metrics.rows.append(
                MetricRow(metrics.round_index, phase, client_id, accuracy=accuracy, loss=loss)
            )
        metrics.add_mean_row(phase)
        LOGGER.debug("Round %s %s: %s clients evaluated", metrics.round_index, phase, len(results))

    # Persistence
    def state_dict(self) -> Dict[str, Any]:
        return {
            "clients": {cid: client.snapshot() for cid, client in self.fleet.clients.items()},
            "active": list(self.active),
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        for client_id, snapshot in state["clients"].items():
            self.fleet.clients[client_id].restore(snapshot, self.global_arch)
        self.active = list(state["active"])

    def hypernet_state(self) -> Optional[Dict[str, Any]]:
        return self.hypernet.state_dict() if self.hypernet is not None else None

    def load_hypernet_state(self, state: Optional[Dict[str, Any]]) -> None:
        if state is not None and self.hypernet is not None:
            self.hypernet.load_state_dict(state)
