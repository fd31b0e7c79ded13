# pylint: disable=invalid-name
import os
import random
import string
import threading
import uuid
import warnings
from concurrent import futures
from enum import IntEnum
from pathlib import Path
from typing import Callable, List, Optional, Union

from apscheduler.executors.pool import ThreadPoolExecutor
from apscheduler.job import Job
from apscheduler.jobstores.base import JobLookupError
from apscheduler.schedulers.background import BackgroundScheduler
from apscheduler.schedulers.base import BaseScheduler
from apscheduler.triggers.interval import IntervalTrigger

from HyperFedSim.config import RunConfig, config_from_dict, config_to_dict, dump_config
from HyperFedSim.constants import (
    CHECKPOINT_DIR,
    CHECKPOINT_FORMAT_VERSION,
    CKPT_CONFIG,
    CKPT_FORMAT,
    CKPT_HYPERNET,
    CKPT_METRIC_ROWS,
    CKPT_ROUND,
    CKPT_RUNNER,
    METRICS_FILE,
    PLAN_FILE,
    RESOLVED_CONFIG_FILE,
    SDK_NAME,
    SDK_VERSION,
)
from HyperFedSim.engine import MetricsSink, RoundMetrics, truncate_rows
from HyperFedSim.events import (
    BaseEvent,
    CheckpointEvent,
    FinishedEvent,
    ReadyEvent,
    RoundEvent,
    SimulatorEventType,
)
from HyperFedSim.periodic_tasks import report_progress
from HyperFedSim.runners import BaseRunner, build_fleet, make_runner

from .cache import BaseCheckpointStore, FileCheckpointStore
from .utils import LOGGER


class _RunState(IntEnum):
    UNINITIALIZED = 0
    INITIALIZED = 1
    SHUTDOWN = 2


class HyperFedSimulator:
    """
    Runs one federated experiment end to end and owns its artifacts.

    :param config: Resolved run configuration, required.
    :param workers: Size of the client training pool; 1 trains clients on the calling thread.
        Defaults to ``config.workers``, then to the number of cores.
    :param checkpoint_store: Custom store extending HyperFedSim.cache.BaseCheckpointStore. When unset,
        checkpoints go to an fcache store under ``<output directory>/checkpoint``.
    :param resume: Continue from the checkpoint in the store instead of starting over.
    :param progress_interval: Seconds between progress log lines, optional & defaults to the
        configured interval. 0 disables the heartbeat.
    :param verbose_log_level: Numerical log level for failures inside ``event_callback``.
    :param scheduler: Custom APScheduler object for the progress heartbeat. When unset, the simulator
        creates its own scheduler.
    :param scheduler_executor: Name of the APScheduler executor to use with a custom scheduler.
    :param event_callback: Function called with every simulator event. Exceptions it raises are logged
        and swallowed.
    """

    def __init__(
        self,
        config: RunConfig,
        workers: Optional[int] = None,
        checkpoint_store: Optional[BaseCheckpointStore] = None,
        resume: bool = False,
        progress_interval: Optional[int] = None,
        verbose_log_level: int = 30,
        scheduler: Optional[BaseScheduler] = None,
        scheduler_executor: Optional[str] = None,
        event_callback: Optional[Callable[[BaseEvent], None]] = None,
    ) -> None:
        # Configuration
        self.config = config
        self.output_dir = Path(config.output.directory)
        self.workers = workers or config.workers
        self.resume = resume
        self.progress_interval = (
            config.output.progress_interval if progress_interval is None else progress_interval
        )
        self.verbose_log_level = verbose_log_level
        self.event_callback = event_callback
        self._lifecycle_lock = threading.RLock()
        self._closed = threading.Event()

        # Class objects
        self._checkpoint_store = checkpoint_store
        self.runner: Optional[BaseRunner] = None
        self.sink: Optional[MetricsSink] = None
        self.executor: Optional[futures.Executor] = None
        self.progress_job: Job = None
        self._init_scheduler(scheduler, scheduler_executor)

        # Run status
        self._run_state = _RunState.UNINITIALIZED
        self.start_round = 1
        self.completed_round = 0
        self.last_accuracy: Optional[float] = None
        self.history: List[RoundMetrics] = []

    @classmethod
    def from_checkpoint(
        cls, directory: Union[str, Path], **kwargs
    ) -> "HyperFedSimulator":
        """
        A simulator that resumes the run whose checkpoint store lives in ``directory``.

        :raises CheckpointError: Missing or incompatible checkpoint.
        """
        store = FileCheckpointStore(SDK_NAME, directory=directory)
        store.check_compatible()
        config = config_from_dict(store.get(CKPT_CONFIG))
        return cls(config, checkpoint_store=store, resume=True, **kwargs)

    def _init_scheduler(
        self, scheduler: Optional[BaseScheduler], scheduler_executor: Optional[str]
    ) -> None:
        """
        Scheduler bootstrapping
        """
        if scheduler and scheduler_executor:
            self.executor_name = scheduler_executor
        elif scheduler and not scheduler_executor:
            raise ValueError("If using a custom scheduler, you must specify a executor.")
        else:
            if not scheduler and scheduler_executor:
                LOGGER.warning("scheduler_executor should only be used with a custom scheduler.")

            self.executor_name = f"hyperfedsim_executor_{''.join(random.choices(string.ascii_uppercase + string.digits, k=6))}"

        if scheduler:
            self.scheduler = scheduler
            self._owns_scheduler = False
        else:
            executors = {self.executor_name: ThreadPoolExecutor()}
            self.scheduler = BackgroundScheduler(executors=executors)
            self._owns_scheduler = True

    @property
    def is_initialized(self) -> bool:
        return self._run_state == _RunState.INITIALIZED

    @property
    def checkpoint_store(self) -> BaseCheckpointStore:
        if self._checkpoint_store is None:
            self._checkpoint_store = FileCheckpointStore(
                SDK_NAME, directory=self.output_dir / CHECKPOINT_DIR
            )
        return self._checkpoint_store

    @property
    def metrics_path(self) -> Path:
        return self.output_dir / METRICS_FILE

    def _emit(self, event: BaseEvent) -> None:
        if not self.event_callback:
            return
        try:
            self.event_callback(event)
        except Exception as excep:  # pylint: disable=broad-except
            LOGGER.log(self.verbose_log_level, "Error in event callback: %s", excep)

    def _progress(self):
        total = self.runner.total_rounds if self.runner else 0
        return self.completed_round, total, self.last_accuracy

    def initialize_simulator(self) -> None:
        """
        Builds the fleet and the server state, restores the checkpoint when resuming, writes the
        resolved configuration and partition plan and starts the progress heartbeat.

        It is done automatically if called inside a context manager as in:

        .. code-block:: python

            with HyperFedSimulator(parse_config("desk.json")) as simulator:
                simulator.run()
        """
        with self._lifecycle_lock:
            if self._closed.is_set() or self._run_state > _RunState.UNINITIALIZED:
                warnings.warn(
                    "Attempted to initialize a HyperFedSimulator instance that has already been initialized."
                )
                return
            try:
                self.output_dir.mkdir(parents=True, exist_ok=True)
                workers = self.workers or os.cpu_count() or 1
                if workers > 1:
                    self.executor = futures.ThreadPoolExecutor(
                        max_workers=workers, thread_name_prefix=SDK_NAME
                    )
                fleet = build_fleet(self.config)
                self.runner = make_runner(self.config, fleet, self.executor)
                self.runner.setup()

                if self.resume:
                    self._restore()
                else:
                    if self.metrics_path.exists():
                        self.metrics_path.unlink()
                    dump_config(self.config, self.output_dir / RESOLVED_CONFIG_FILE)
                    fleet.plan.save(self.output_dir / PLAN_FILE)
                self.sink = MetricsSink(self.metrics_path)

                if self.progress_interval:
                    self.progress_job = self.scheduler.add_job(
                        report_progress,
                        trigger=IntervalTrigger(seconds=int(self.progress_interval)),
                        executor=self.executor_name,
                        kwargs={"algorithm": self.runner.algorithm, "progress": self._progress},
                    )
                    if self._owns_scheduler:
                        self.scheduler.start()
                self._run_state = _RunState.INITIALIZED
                LOGGER.info(
                    "%s %s initialized: %s, rounds %s-%s, output in %s",
                    SDK_NAME,
                    SDK_VERSION,
                    self.runner.algorithm,
                    self.start_round,
                    self.runner.total_rounds,
                    self.output_dir,
                )
                self._emit(
                    ReadyEvent(
                        event_type=SimulatorEventType.READY,
                        event_id=uuid.uuid4(),
                        algorithm=self.runner.algorithm,
                        start_round=self.start_round,
                    )
                )
            except Exception as excep:
                LOGGER.warning("Exception during HyperFedSimulator initialization: %s", excep)
                self._shutdown_pools()
                raise excep

    def _restore(self) -> None:
        store = self.checkpoint_store
        store.check_compatible()
        completed = store.get(CKPT_ROUND)
        self.runner.load_hypernet_state(store.get(CKPT_HYPERNET))
        self.runner.load_state_dict(store.get(CKPT_RUNNER))
        if self.metrics_path.exists():
            truncate_rows(self.metrics_path, store.get(CKPT_METRIC_ROWS, 0))
        self.completed_round = completed
        self.start_round = completed + 1
        LOGGER.info("Resumed from checkpoint after round %s", completed)

    def save_checkpoint(self, round_index: int) -> None:
        self.checkpoint_store.mset(
            {
                CKPT_FORMAT: CHECKPOINT_FORMAT_VERSION,
                CKPT_CONFIG: config_to_dict(self.config),
                CKPT_ROUND: round_index,
                CKPT_HYPERNET: self.runner.hypernet_state(),
                CKPT_RUNNER: self.runner.state_dict(),
                CKPT_METRIC_ROWS: self.sink.rows_written,
            }
        )
        location = str(self.output_dir / CHECKPOINT_DIR)
        LOGGER.info("Checkpoint saved after round %s", round_index)
        self._emit(
            CheckpointEvent(
                event_type=SimulatorEventType.CHECKPOINT,
                event_id=uuid.uuid4(),
                round_index=round_index,
                location=location,
            )
        )

    def run(self) -> Optional[float]:
        """
        Runs every remaining round, streaming rows to the metrics CSV and checkpointing every
        ``checkpoint_every`` rounds and after the last one.

        :return: Mean personalized test accuracy of the last evaluated round.
        """
        if not self.is_initialized:
            self.initialize_simulator()
        every = self.config.rounds.checkpoint_every
        total = self.runner.total_rounds
        for metrics in self.runner.rounds(self.start_round):
            round_index = metrics.round_index
            self.sink.write(metrics.rows)
            self.history.append(metrics)
            accuracy = metrics.accuracy()
            if accuracy is not None:
                self.last_accuracy = accuracy
            self.completed_round = round_index
            self._emit(
                RoundEvent(
                    event_type=SimulatorEventType.ROUND,
                    event_id=uuid.uuid4(),
                    round_index=round_index,
                    mean_accuracy=accuracy,
                    metrics=metrics,
                )
            )
            if round_index % every == 0 or round_index == total:
                self.save_checkpoint(round_index)
        if self.completed_round < self.start_round:
            # Nothing left to run; still leave a checkpoint behind.
            self.save_checkpoint(self.completed_round)
        self._emit(
            FinishedEvent(
                event_type=SimulatorEventType.FINISHED,
                event_id=uuid.uuid4(),
                rounds=self.completed_round,
                mean_accuracy=self.last_accuracy,
            )
        )
        return self.last_accuracy

    def dry_run(self) -> List[str]:
        """
        Builds the fleet and server state and describes the planned phases. Trains nothing and
        writes no artifacts.
        """
        runner = make_runner(self.config, build_fleet(self.config))
        runner.setup()
        return runner.describe()

    def _shutdown_pools(self) -> None:
        if self.executor is not None:
            self.executor.shutdown(wait=True)
            self.executor = None

    def destroy(self) -> None:
        """
        Stops the heartbeat and the training pool. Artifacts and the checkpoint store are kept.
        """
        with self._lifecycle_lock:
            if self._closed.is_set():
                return
            self._closed.set()
            self._run_state = _RunState.SHUTDOWN

            if self.progress_job:
                try:
                    self.progress_job.remove()
                except JobLookupError as exc:
                    LOGGER.info("Exception during heartbeat teardown: %s", exc)

            try:
                if self._owns_scheduler and self.scheduler.running:
                    self.scheduler.shutdown(wait=True)
            except Exception as exc:  # pylint: disable=broad-except
                LOGGER.warning("Exception during scheduler teardown: %s", exc)

            self._shutdown_pools()

    def __enter__(self) -> "HyperFedSimulator":
        self.initialize_simulator()
        return self

    def __exit__(self, *args, **kwargs):
        self.destroy()
        return False


__all__ = ["HyperFedSimulator"]
