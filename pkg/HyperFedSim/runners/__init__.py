"""
Round runners, one per algorithm, plus ``run_*`` helpers that stream RoundMetrics for a config.
"""
from concurrent.futures import Executor
from typing import Dict, Iterator, Optional, Type

from HyperFedSim.config import RunConfig
from HyperFedSim.engine import RoundMetrics

from .base_runner import BaseRunner
from .baseline_runner import FedAvgRunner, LocalRunner
from .distillation_runner import MHPFedHNGDRunner, MHPFedHNGRunner
from .fleet import Fleet, build_fleet, build_plan, client_architecture, load_dataset
from .generalization_runner import GeneralizationRunner
from .hypernet_runner import MHPFedHNRunner, build_hypernet

RUNNERS: Dict[str, Type[BaseRunner]] = {
    runner.algorithm: runner
    for runner in (
        MHPFedHNRunner,
        MHPFedHNGDRunner,
        MHPFedHNGRunner,
        FedAvgRunner,
        LocalRunner,
        GeneralizationRunner,
    )
}


def make_runner(
    config: RunConfig,
    fleet: Optional[Fleet] = None,
    executor: Optional[Executor] = None,
    **kwargs,
) -> BaseRunner:
    """
    Builds (but does not set up) the runner for ``config.rounds.algorithm``.
    """
    fleet = fleet if fleet is not None else build_fleet(config)
    runner_class = RUNNERS[config.rounds.algorithm]
    return runner_class(config, fleet, executor, **kwargs)


def _stream(runner: BaseRunner) -> Iterator[RoundMetrics]:
    runner.setup()
    yield from runner.rounds()


def run_mh_pfedhn(config: RunConfig, executor: Optional[Executor] = None) -> Iterator[RoundMetrics]:
    return _stream(MHPFedHNRunner(config, build_fleet(config), executor))


def run_mh_pfedhngd(config: RunConfig, executor: Optional[Executor] = None) -> Iterator[RoundMetrics]:
    return _stream(MHPFedHNGDRunner(config, build_fleet(config), executor))


def run_mh_pfedhng(config: RunConfig, executor: Optional[Executor] = None) -> Iterator[RoundMetrics]:
    return _stream(MHPFedHNGRunner(config, build_fleet(config), executor))


def run_fedavg(config: RunConfig, executor: Optional[Executor] = None) -> Iterator[RoundMetrics]:
    return _stream(FedAvgRunner(config, build_fleet(config), executor))


def run_local(config: RunConfig, executor: Optional[Executor] = None) -> Iterator[RoundMetrics]:
    return _stream(LocalRunner(config, build_fleet(config), executor))


def run_generalization(
    config: RunConfig, mode: Optional[str] = None, executor: Optional[Executor] = None
) -> Iterator[RoundMetrics]:
    return _stream(GeneralizationRunner(config, build_fleet(config), executor, mode=mode))


__all__ = [
    "BaseRunner",
    "FedAvgRunner",
    "Fleet",
    "GeneralizationRunner",
    "LocalRunner",
    "MHPFedHNGDRunner",
    "MHPFedHNGRunner",
    "MHPFedHNRunner",
    "RUNNERS",
    "build_fleet",
    "build_hypernet",
    "build_plan",
    "client_architecture",
    "load_dataset",
    "make_runner",
    "run_fedavg",
    "run_generalization",
    "run_local",
    "run_mh_pfedhn",
    "run_mh_pfedhng",
    "run_mh_pfedhngd",
]
