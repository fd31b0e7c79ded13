import abc
from pathlib import Path
from typing import Any, Optional, Union

import semver
from fcache.cache import FileCache as _FileCache

from HyperFedSim.constants import CHECKPOINT_FORMAT_VERSION, CKPT_FORMAT, CKPT_ROUND
from HyperFedSim.exceptions import CheckpointError


class BaseCheckpointStore(abc.ABC):
    """
    Abstract key/value store for run checkpoints.

    Values are whole checkpoint sections (resolved config, hypernetwork state, runner state...),
    so implementations must store arbitrary picklable objects bit for bit.
    """

    @abc.abstractmethod
    def set(self, key: str, value: Any):
        pass

    @abc.abstractmethod
    def mset(self, data: dict):
        pass

    @abc.abstractmethod
    def get(self, key: str, default: Optional[Any] = None):
        pass

    @abc.abstractmethod
    def exists(self, key: str):
        pass

    @abc.abstractmethod
    def destroy(self):
        pass

    def check_compatible(self) -> None:
        """
        Raises unless the store holds a checkpoint written by a compatible library version.

        :raises CheckpointError: No checkpoint, or a different format major version.
        """
        if not self.exists(CKPT_FORMAT) or not self.exists(CKPT_ROUND):
            raise CheckpointError("no checkpoint found")
        found = semver.VersionInfo.parse(self.get(CKPT_FORMAT))
        current = semver.VersionInfo.parse(CHECKPOINT_FORMAT_VERSION)
        if found.major != current.major:
            raise CheckpointError(
                f"checkpoint format {found} cannot be read by format {current}"
            )


class FileCheckpointStore(BaseCheckpointStore):
    """
    The default checkpoint store. Uses `fcache <https://pypi.org/project/fcache/>`_ behind the
    scenes: one pickled file per key.

    Example:

    .. code-block:: python

        from HyperFedSim.cache import FileCheckpointStore

        store = FileCheckpointStore("checkpoint", directory="runs/desk/checkpoint")
        store.check_compatible()
        completed = store.get("completed_round")

    :param name: Name of the store.
    :param directory: Location to create the store. If empty, will use the fcache default.
    """

    def __init__(self, name: str, directory: Optional[Union[str, Path]] = None):
        self._cache = _FileCache(name, app_cache_dir=str(directory) if directory else None)

    def set(self, key: str, value: Any):
        self._cache[key] = value
        self._cache.sync()

    def mset(self, data: dict):
        self._cache.update(data)
        self._cache.sync()

    def get(self, key: str, default: Optional[Any] = None):
        return self._cache.get(key, default)

    def exists(self, key: str):
        return key in self._cache

    def destroy(self):
        return self._cache.delete()
