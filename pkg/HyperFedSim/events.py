from dataclasses import dataclass
from enum import Enum
from typing import Optional
from uuid import UUID

from HyperFedSim.engine import RoundMetrics


class SimulatorEventType(Enum):
    """
    Indicates what kind of event was triggered.
    """

    READY = "ready"
    ROUND = "round"
    CHECKPOINT = "checkpoint"
    FINISHED = "finished"


@dataclass
class BaseEvent:
    """
    Base event type for all events emitted by the simulator.
    """

    event_type: SimulatorEventType
    event_id: UUID


@dataclass
class ReadyEvent(BaseEvent):
    """
    Event indicating that the fleet and server state are built and rounds can start.
    """

    algorithm: str
    start_round: int


@dataclass
class RoundEvent(BaseEvent):
    """
    Event emitted after every completed round.
    """

    round_index: int
    mean_accuracy: Optional[float]
    metrics: RoundMetrics

    @property
    def uplink_bytes(self) -> int:
        return self.metrics.uplink_bytes

    @property
    def downlink_bytes(self) -> int:
        return self.metrics.downlink_bytes


@dataclass
class CheckpointEvent(BaseEvent):
    round_index: int
    location: str


@dataclass
class FinishedEvent(BaseEvent):
    rounds: int
    mean_accuracy: Optional[float] = None
