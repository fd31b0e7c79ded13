import csv
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

from HyperFedSim.constants import MEAN_ROW_ID, METRICS_HEADER, PHASE_EVAL, PHASE_EVAL_HELDOUT


@dataclass(frozen=True)
class MetricRow:
    round_index: int
    phase: str
    client_id: Union[int, str]
    accuracy: Optional[float] = None
    loss: Optional[float] = None
    uplink_bytes: int = 0
    downlink_bytes: int = 0

    def as_csv(self) -> List[str]:
        def number(value: Optional[float]) -> str:
            return "" if value is None else f"{value:.6f}"

        return [
            str(self.round_index),
            self.phase,
            str(self.client_id),
            number(self.accuracy),
            number(self.loss),
            str(self.uplink_bytes),
            str(self.downlink_bytes),
        ]


@dataclass
class RoundMetrics:
    """
    Everything measured in one round: per-client rows, byte totals and wall-clock per phase.
    """

    round_index: int
    rows: List[MetricRow] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def uplink_bytes(self) -> int:
        return sum(row.uplink_bytes for row in self.rows)

    @property
    def downlink_bytes(self) -> int:
        return sum(row.downlink_bytes for row in self.rows)

    def client_rows(self, phase: str) -> List[MetricRow]:
        return [row for row in self.rows if row.phase == phase and row.client_id != MEAN_ROW_ID]

    def accuracy(self, phase: Optional[str] = None) -> Optional[float]:
        """
        Mean accuracy over the clients evaluated in ``phase``, or None if none were. Without a
        phase, the personalized evaluation or else the held-out one.
        """
        if phase is None:
            headline = self.accuracy(PHASE_EVAL)
            return headline if headline is not None else self.accuracy(PHASE_EVAL_HELDOUT)
        rows = [row for row in self.client_rows(phase) if row.accuracy is not None]
        if not rows:
            return None
        return sum(row.accuracy for row in rows) / len(rows)

    def add_mean_row(self, phase: str) -> None:
        rows = [row for row in self.client_rows(phase) if row.accuracy is not None]
        if not rows:
            return
        self.rows.append(
            MetricRow(
                round_index=self.round_index,
                phase=phase,
                client_id=MEAN_ROW_ID,
                accuracy=sum(row.accuracy for row in rows) / len(rows),
                loss=sum(row.loss for row in rows) / len(rows),
            )
        )


class MetricsSink:
    """
    Append-only CSV writer. Rows are written in the order they are given.
    """

    def __init__(self, path: Union[str, Path]) -> None:
        self.path = Path(path)
        self.rows_written = 0
        self._lock = threading.Lock()
        if not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", encoding="utf8", newline="") as handle:
                csv.writer(handle).writerow(METRICS_HEADER)
        else:
            self.rows_written = count_rows(self.path)

    def write(self, rows: Iterable[MetricRow]) -> None:
        with self._lock, open(self.path, "a", encoding="utf8", newline="") as handle:
            writer = csv.writer(handle)
            for row in rows:
                writer.writerow(row.as_csv())
                self.rows_written += 1


def count_rows(path: Union[str, Path]) -> int:
    with open(path, "r", encoding="utf8", newline="") as handle:
        return max(sum(1 for _ in csv.reader(handle)) - 1, 0)


def truncate_rows(path: Union[str, Path], keep: int) -> None:
    """
    Cuts a metrics CSV back to its header plus the first ``keep`` rows.
    """
    with open(path, "r", encoding="utf8", newline="") as handle:
        lines = list(csv.reader(handle))
    with open(path, "w", encoding="utf8", newline="") as handle:
        csv.writer(handle).writerows(lines[: keep + 1])


def read_rows(path: Union[str, Path]) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf8", newline="") as handle:
        return list(csv.DictReader(handle))
