import uuid

import numpy as np
import pytest

from HyperFedSim.cache import FileCheckpointStore
from HyperFedSim.constants import CHECKPOINT_FORMAT_VERSION, CKPT_FORMAT, CKPT_ROUND
from tests.utilities.builders import blobs, tiny_config


@pytest.fixture()
def store_empty(tmp_path):
    store_name = "pytest_%s" % uuid.uuid4()
    temporary_store = FileCheckpointStore(store_name, directory=tmp_path)
    yield temporary_store
    temporary_store.destroy()


@pytest.fixture()
def store_full(tmp_path):
    store_name = "pytest_%s" % uuid.uuid4()
    temporary_store = FileCheckpointStore(store_name, directory=tmp_path)
    temporary_store.mset({CKPT_FORMAT: CHECKPOINT_FORMAT_VERSION, CKPT_ROUND: 4})
    yield temporary_store
    temporary_store.destroy()


@pytest.fixture()
def blob_dataset():
    return blobs()


@pytest.fixture()
def config(tmp_path):
    return tiny_config(str(tmp_path / "run"))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
