"""
Run configuration: a tree of frozen dataclasses parsed from JSON.

A document may name a ``preset`` (``<dataset>-<noniid1|noniid2>-<clients>`` or ``desk-blobs``);
the preset is expanded first and explicit keys override it. Every default is written out by
``dump_config`` so a resolved config re-parses to an equal object.
"""
import json
import re
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from HyperFedSim.constants import (
    BATCH_SIZE,
    CHECKPOINT_EVERY,
    CLIENT_LR,
    CLIENT_MOMENTUM,
    CLIENT_WEIGHT_DECAY,
    DISTILLATION_DEFAULTS,
    EMBEDDING_DIM,
    EVAL_EVERY,
    GROUPING_MODES,
    HIDDEN_DIM,
    HIDDEN_LAYERS,
    HOLDOUT_FRACTION,
    HYPERNET_LR,
    LOCAL_EPOCHS,
    OUTPUT_DIM,
    PARTICIPATION,
    ROUNDS,
    TRAIN_FRACTION,
)
from HyperFedSim.exceptions import ConfigError

ALGORITHMS = ("mh-pfedhn", "mh-pfedhngd", "mh-pfedhng", "fedavg", "local", "generalization")
DATASET_KINDS = ("blobs", "idx", "cifar")
PARTITION_SCHEMES = ("noniid1", "noniid2")
FREEZE_MODES = ("embeddings-only", "new-head")
DTYPES = ("float64", "float32")
REQUIRED_KEYS = ("dataset", "fleet")


@dataclass(frozen=True)
class DatasetConfig:
    name: str = "blobs"
    kind: str = "blobs"
    files: Tuple[str, ...] = ()
    labels_file: Optional[str] = None
    fine_labels: Optional[bool] = None
    url: Optional[str] = None
    num_classes: int = 10
    per_class: int = 100
    dim: int = 64
    spread: float = 0.5


@dataclass(frozen=True)
class PartitionConfig:
    scheme: str = "noniid1"
    classes_per_client: int = 3
    beta: float = 0.01
    strict_coverage: bool = False
    train_fraction: float = TRAIN_FRACTION


@dataclass(frozen=True)
class FleetConfig:
    """
    ``architectures`` are assigned round-robin by client id, so several architectures are spread
    evenly over the fleet. Layer flags apply to every client whose architecture has that layer.
    """

    num_clients: int = 10
    architectures: Tuple[str, ...] = ("tiny-mlp",)
    local_layers: Tuple[str, ...] = ()
    frozen_layers: Tuple[str, ...] = ()
    local_norm_layers: Tuple[str, ...] = ()
    global_architecture: Optional[str] = None
    dtype: str = "float64"


@dataclass(frozen=True)
class RoundConfig:
    algorithm: str = "mh-pfedhn"
    rounds: int = ROUNDS
    local_epochs: int = LOCAL_EPOCHS
    batch_size: int = BATCH_SIZE
    client_lr: float = CLIENT_LR
    client_momentum: float = CLIENT_MOMENTUM
    client_weight_decay: float = CLIENT_WEIGHT_DECAY
    participation: float = PARTICIPATION
    lam: Optional[float] = None
    temperature: Optional[float] = None
    prune_fraction: float = 0.0
    deployment_ratio: float = 1.0
    independent_phase_sampling: bool = False
    eval_every: int = EVAL_EVERY
    checkpoint_every: int = CHECKPOINT_EVERY
    generalization_mode: str = "embeddings-only"
    generalization_rounds: int = 20
    holdout_fraction: float = HOLDOUT_FRACTION
    pretrained: Optional[str] = None


@dataclass(frozen=True)
class HypernetConfig:
    embedding_dim: int = EMBEDDING_DIM
    hidden_dim: int = HIDDEN_DIM
    hidden_layers: int = HIDDEN_LAYERS
    output_dim: int = OUTPUT_DIM
    lr: float = HYPERNET_LR
    grouping: str = "tau"
    no_head: bool = False
    share_embeddings: bool = False


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "runs/default"
    progress_interval: int = 30


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: Optional[int] = None
    preset: Optional[str] = None
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    fleet: FleetConfig = field(default_factory=FleetConfig)
    rounds: RoundConfig = field(default_factory=RoundConfig)
    hypernet: HypernetConfig = field(default_factory=HypernetConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def output_dir(self) -> Path:
        return Path(self.output.directory)


NESTED = {
    "dataset": DatasetConfig,
    "partition": PartitionConfig,
    "fleet": FleetConfig,
    "rounds": RoundConfig,
    "hypernet": HypernetConfig,
    "output": OutputConfig,
}

# Presets
PRESET_PATTERN = re.compile(r"^(emnist|cifar10|cifar100|tinyimagenet)-(noniid1|noniid2)-(\d+)$")
CLASSES_PER_CLIENT = {"emnist": 6, "cifar10": 2, "cifar100": 10, "tinyimagenet": 20}
DATASET_PRESETS: Dict[str, Dict[str, Any]] = {
    "emnist": {
        "kind": "idx",
        "files": ["emnist/emnist-byclass-train-images-idx3-ubyte.gz"],
        "labels_file": "emnist/emnist-byclass-train-labels-idx1-ubyte.gz",
        "num_classes": 62,
    },
    "cifar10": {
        "kind": "cifar",
        "files": [f"cifar-10-batches-bin/data_batch_{i}.bin" for i in range(1, 6)],
        "num_classes": 10,
    },
    "cifar100": {
        "kind": "cifar",
        "files": ["cifar-100-binary/train.bin"],
        "fine_labels": True,
        "num_classes": 100,
    },
    "tinyimagenet": {
        "kind": "idx",
        "files": ["tinyimagenet/train-images-idx4-ubyte.gz"],
        "labels_file": "tinyimagenet/train-labels-idx1-ubyte.gz",
        "num_classes": 200,
    },
}
DESK_BLOBS = {
    "dataset": {"name": "blobs", "kind": "blobs", "num_classes": 10, "per_class": 60, "dim": 64, "spread": 0.5},
    "partition": {"scheme": "noniid1", "classes_per_client": 3},
    "fleet": {"num_clients": 10, "architectures": ["tiny-mlp"]},
    "rounds": {"rounds": 100, "client_lr": 0.05, "batch_size": 32},
    "hypernet": {"embedding_dim": 16, "hidden_dim": 32, "output_dim": 512, "lr": 5e-3},
}


def expand_preset(name: str) -> Dict[str, Any]:
    if name == "desk-blobs":
        return json.loads(json.dumps(DESK_BLOBS))
    match = PRESET_PATTERN.match(name)
    if not match:
        raise ConfigError(
            f"Unknown preset '{name}', expected desk-blobs or <emnist|cifar10|cifar100|tinyimagenet>-<noniid1|noniid2>-<clients>"
        )
    dataset, scheme, clients = match.group(1), match.group(2), int(match.group(3))
    partition: Dict[str, Any] = {"scheme": scheme}
    if scheme == "noniid1":
        partition["classes_per_client"] = CLASSES_PER_CLIENT[dataset]
    else:
        partition["beta"] = 0.01
    return {
        "dataset": {"name": dataset, **DATASET_PRESETS[dataset]},
        "partition": partition,
        "fleet": {"num_clients": clients, "architectures": ["lenet"]},
        "rounds": {"rounds": ROUNDS},
    }


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _line_of(text: Optional[str], key: str, after: Optional[str] = None) -> Optional[int]:
    """1-based line of the first ``"key":`` (after ``"after":`` when given), or None."""
    if not text:
        return None
    start = 0
    if after:
        parent = re.search(rf'"{re.escape(after)}"\s*:', text)
        if parent:
            start = parent.end()
    found = re.compile(rf'"{re.escape(key)}"\s*:').search(text, start)
    if not found:
        return None
    return text.count("\n", 0, found.start()) + 1


def _coerce(cls, name: str, value: Any, text: Optional[str], section: Optional[str]):
    default = next(f for f in fields(cls) if f.name == name).default
    line = _line_of(text, name, section)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"'{name}' must be a list", line)
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"'{name}' must be true or false", line)
        return value
    if value is None:
        if default is not None:
            raise ConfigError(f"'{name}' cannot be null", line)
        return None
    if isinstance(default, int) or name == "workers":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{name}' must be an integer", line)
        return value
    if isinstance(default, float) or name in ("lam", "temperature"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{name}' must be a number", line)
        return float(value)
    if name == "fine_labels":
        if not isinstance(value, bool):
            raise ConfigError("'fine_labels' must be true, false or null", line)
        return value
    if not isinstance(value, str):
        raise ConfigError(f"'{name}' must be a string", line)
    return value


def _build(cls, document: Dict[str, Any], text: Optional[str], section: Optional[str] = None):
    if not isinstance(document, dict):
        raise ConfigError(f"'{section}' must be an object", _line_of(text, section or ""))
    known = {f.name for f in fields(cls)}
    for key in document:
        if key not in known:
            where = f" in '{section}'" if section else ""
            raise ConfigError(f"Unknown key '{key}'{where}", _line_of(text, key, section))
    values = {}
    for key, value in document.items():
        if cls is RunConfig and key in NESTED:
            values[key] = _build(NESTED[key], value, text, key)
        else:
            values[key] = _coerce(cls, key, value, text, section)
    return cls(**values)


def _check(condition: bool, message: str, text: Optional[str], key: str, section: str) -> None:
    if not condition:
        raise ConfigError(message, _line_of(text, key, section))


def _resolve(config: RunConfig, text: Optional[str]) -> RunConfig:
    rounds, dataset = config.rounds, config.dataset
    distill = DISTILLATION_DEFAULTS.get(dataset.name, DISTILLATION_DEFAULTS["cifar100"])
    if rounds.lam is None or rounds.temperature is None:
        rounds = replace(
            rounds,
            lam=distill["lam"] if rounds.lam is None else rounds.lam,
            temperature=distill["temperature"] if rounds.temperature is None else rounds.temperature,
        )
    config = replace(config, rounds=rounds)

    _check(rounds.algorithm in ALGORITHMS, f"algorithm must be one of {ALGORITHMS}", text, "algorithm", "rounds")
    _check(rounds.rounds >= 0, "rounds must be >= 0", text, "rounds", "rounds")
    _check(rounds.local_epochs >= 0, "local_epochs must be >= 0", text, "local_epochs", "rounds")
    _check(rounds.batch_size >= 1, "batch_size must be >= 1", text, "batch_size", "rounds")
    _check(0.0 < rounds.participation <= 1.0, "participation must lie in (0, 1]", text, "participation", "rounds")
    _check(0.0 <= rounds.lam <= 1.0, "lam must lie in [0, 1]", text, "lam", "rounds")
    _check(rounds.temperature > 0, "temperature must be positive", text, "temperature", "rounds")
    _check(0.0 <= rounds.prune_fraction < 1.0, "prune_fraction must lie in [0, 1)", text, "prune_fraction", "rounds")
    _check(0.0 <= rounds.deployment_ratio <= 1.0, "deployment_ratio must lie in [0, 1]", text, "deployment_ratio", "rounds")
    _check(rounds.eval_every >= 1, "eval_every must be >= 1", text, "eval_every", "rounds")
    _check(rounds.checkpoint_every >= 1, "checkpoint_every must be >= 1", text, "checkpoint_every", "rounds")
    _check(
        rounds.generalization_mode in FREEZE_MODES,
        f"generalization_mode must be one of {FREEZE_MODES}",
        text,
        "generalization_mode",
        "rounds",
    )
    _check(0.0 < rounds.holdout_fraction < 1.0, "holdout_fraction must lie in (0, 1)", text, "holdout_fraction", "rounds")

    _check(dataset.kind in DATASET_KINDS, f"dataset kind must be one of {DATASET_KINDS}", text, "kind", "dataset")
    _check(dataset.num_classes >= 1, "num_classes must be >= 1", text, "num_classes", "dataset")
    if dataset.kind != "blobs":
        _check(bool(dataset.files), f"{dataset.kind} datasets need 'files'", text, "files", "dataset")
    if dataset.kind == "idx":
        _check(dataset.labels_file is not None, "idx datasets need 'labels_file'", text, "labels_file", "dataset")

    partition = config.partition
    _check(partition.scheme in PARTITION_SCHEMES, f"scheme must be one of {PARTITION_SCHEMES}", text, "scheme", "partition")
    _check(partition.beta > 0, "beta must be positive", text, "beta", "partition")
    _check(0.0 < partition.train_fraction <= 1.0, "train_fraction must lie in (0, 1]", text, "train_fraction", "partition")

    fleet = config.fleet
    _check(fleet.num_clients >= 1, "num_clients must be >= 1", text, "num_clients", "fleet")
    _check(bool(fleet.architectures), "architectures must not be empty", text, "architectures", "fleet")
    _check(fleet.dtype in DTYPES, f"dtype must be one of {DTYPES}", text, "dtype", "fleet")

    hypernet = config.hypernet
    _check(hypernet.grouping in GROUPING_MODES, f"grouping must be one of {GROUPING_MODES}", text, "grouping", "hypernet")
    for key in ("embedding_dim", "hidden_dim", "hidden_layers", "output_dim"):
        _check(getattr(hypernet, key) >= 1, f"{key} must be >= 1", text, key, "hypernet")
    _check(hypernet.lr > 0, "lr must be positive", text, "lr", "hypernet")
    if config.workers is not None:
        _check(config.workers >= 1, "workers must be >= 1", text, "workers", "")
    return config


def config_from_dict(document: Dict[str, Any], text: Optional[str] = None) -> RunConfig:
    if not isinstance(document, dict):
        raise ConfigError("configuration must be a JSON object", 1)
    preset = document.get("preset")
    if preset is None:
        missing = [key for key in REQUIRED_KEYS if key not in document]
        if missing:
            raise ConfigError(
                f"Missing required keys {missing}; give them or a 'preset'", 1 if text else None
            )
    else:
        try:
            document = _merge(expand_preset(preset), document)
        except ConfigError as exc:
            raise ConfigError(str(exc), _line_of(text, "preset")) from exc
    return _resolve(_build(RunConfig, document, text), text)


def parse_config(path: Union[str, Path]) -> RunConfig:
    """
    Reads and fully resolves a JSON run configuration.

    :raises ConfigError: With the 1-based line of the offending key where it can be located.
    """
    with open(path, "r", encoding="utf8") as config_file:
        text = config_file.read()
    if not text.strip():
        raise ConfigError(
            f"{path} is empty; a configuration needs a 'preset' or the keys {list(REQUIRED_KEYS)}",
            1,
        )
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno) from exc
    return config_from_dict(document, text)


def config_to_dict(config: RunConfig) -> Dict[str, Any]:
    def plain(value):
        if is_dataclass(value):
            return {f.name: plain(getattr(value, f.name)) for f in fields(value)}
        if isinstance(value, tuple):
            return [plain(item) for item in value]
        return value

    return plain(config)


def dump_config(config: RunConfig, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf8") as config_file:
        json.dump(config_to_dict(config), config_file, indent=2)
        config_file.write("\n")

