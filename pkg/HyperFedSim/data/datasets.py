"""
In-memory datasets and the loaders for IDX (MNIST/EMNIST) and CIFAR binary batches.
"""
import gzip
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from HyperFedSim.constants import DATA_DIR_ENV
from HyperFedSim.exceptions import DatasetError
from HyperFedSim.utils import LOGGER, make_rng

PathLike = Union[str, Path]

# IDX type code -> big-endian numpy dtype
IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
CIFAR_IMAGE_BYTES = 3 * 32 * 32


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str

    def __post_init__(self):
        if self.labels.ndim != 1 or self.features.shape[0] != self.labels.shape[0]:
            raise DatasetError(
                f"{self.name}: {self.features.shape[0]} feature rows vs labels of shape {self.labels.shape}"
            )
        if self.labels.size == 0:
            raise DatasetError(f"{self.name} is empty")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DatasetError(f"{self.name}: labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def sample_shape(self) -> Tuple[int, ...]:
        return tuple(self.features.shape[1:])

    def subset(self, indices: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        index = np.asarray(indices, dtype=np.int64)
        return self.features[index], self.labels[index]


def resolve_data_path(path: PathLike) -> Path:
    """
    Relative paths are resolved against ``$HYPERFEDSIM_DATA_DIR`` when it is set.
    """
    path = Path(path)
    base = os.environ.get(DATA_DIR_ENV)
    if not path.is_absolute() and base:
        return Path(base) / path
    return path


def _read_bytes(path: PathLike) -> bytes:
    path = resolve_data_path(path)
    if not path.exists():
        raise DatasetError(f"{path} does not exist")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as handle:
        return handle.read()


def read_idx(path: PathLike) -> np.ndarray:
    """
    Parses an IDX file (optionally gzip-compressed) into an array of its declared shape.
    """
    raw = _read_bytes(path)
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DatasetError(f"{path}: bad IDX magic")
    type_code, ndim = raw[2], raw[3]
    if type_code not in IDX_TYPES:
        raise DatasetError(f"{path}: unknown IDX type code 0x{type_code:02X}")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise DatasetError(f"{path}: truncated IDX header")
    dims = tuple(int(d) for d in np.frombuffer(raw, dtype=">u4", count=ndim, offset=4))
    dtype = IDX_TYPES[type_code]
    count = int(np.prod(dims, dtype=np.int64))
    if count == 0:
        return np.zeros(dims, dtype=dtype.newbyteorder("="))
    expected = count * dtype.itemsize
    if len(raw) - header_end < expected:
        raise DatasetError(
            f"{path}: truncated IDX payload ({len(raw) - header_end} of {expected} bytes)"
        )
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=header_end)
    return data.reshape(dims).astype(dtype.newbyteorder("="))


def load_idx(
    images_path: PathLike,
    labels_path: PathLike,
    num_classes: Optional[int] = None,
    name: str = "idx",
    scale: bool = True,
) -> Dataset:
    """
    Builds a dataset from an IDX image file and its IDX label file. Images gain a leading
    channel axis, so ``[n, rows, cols]`` becomes ``[n, 1, rows, cols]``.
    """
    images = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64).reshape(-1)
    if images.shape[0] == 0 or labels.size == 0:
        raise DatasetError(f"{images_path}: IDX file holds no items")
    if images.shape[0] != labels.shape[0]:
        raise DatasetError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    features = images.astype(np.float32)
    if scale and images.dtype == np.uint8:
        features /= 255.0
    if features.ndim == 3:
        features = features[:, None, :, :]
    classes = num_classes if num_classes is not None else int(labels.max()) + 1
    LOGGER.info("Loaded %s: %s samples of shape %s", name, labels.size, features.shape[1:])
    return Dataset(features=features, labels=labels, num_classes=classes, name=name)


def load_cifar_binary(
    paths: Union[PathLike, Sequence[PathLike]],
    fine_labels: Optional[bool] = None,
    name: Optional[str] = None,
    scale: bool = True,
) -> Dataset:
    """
    Reads CIFAR binary batches.

    :param fine_labels: ``None`` for CIFAR-10 rows (one label byte), ``True``/``False`` for
        CIFAR-100 rows (coarse byte then fine byte), selecting the fine or the coarse label.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    label_bytes = 1 if fine_labels is None else 2
    row = label_bytes + CIFAR_IMAGE_BYTES
    features, labels = [], []
    for path in paths:
        raw = _read_bytes(path)
        if not raw or len(raw) % row:
            raise DatasetError(f"{path}: {len(raw)} bytes is not a whole number of {row}-byte rows")
        table = np.frombuffer(raw, dtype=np.uint8).reshape(-1, row)
        labels.append(table[:, 1 if fine_labels else 0].astype(np.int64))
        features.append(table[:, label_bytes:].reshape(-1, 3, 32, 32))

    images = np.concatenate(features).astype(np.float32)
    if scale:
        images /= 255.0
    if fine_labels is None:
        num_classes, default_name = 10, "cifar10"
    else:
        num_classes, default_name = (100, "cifar100") if fine_labels else (20, "cifar100-coarse")
    return Dataset(
        features=images,
        labels=np.concatenate(labels),
        num_classes=num_classes,
        name=name or default_name,
    )


def synth_blobs(
    num_classes: int,
    per_class: int,
    dim: int,
    spread: float,
    seed: int,
    name: str = "blobs",
) -> Dataset:
    """
    Gaussian clusters around unit-norm class means; rows are shuffled.
    """
    if num_classes < 1 or per_class < 1 or dim < 1:
        raise DatasetError("blobs need at least one class, one sample per class and one dimension")
    rng = make_rng(seed, "blobs")
    means = rng.normal(size=(num_classes, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.repeat(np.arange(num_classes), per_class)
    features = means[labels] + spread * rng.normal(size=(labels.size, dim))
    order = rng.permutation(labels.size)
    return Dataset(
        features=features[order],
        labels=labels[order].astype(np.int64),
        num_classes=num_classes,
        name=name,
    )
