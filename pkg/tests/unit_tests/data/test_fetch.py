import numpy as np
import pytest
import responses
from pytest import mark, param
from requests.exceptions import MissingSchema

from HyperFedSim.data import fetch_dataset, load_idx
from tests.utilities.builders import idx_bytes
from tests.utilities.testing_constants import (
    IMAGES_FILE,
    IMAGES_URL,
    LABELS_FILE,
    REQUEST_RETRIES,
    REQUEST_TIMEOUT,
    URL,
)

PAYLOAD = idx_bytes(np.arange(8, dtype=np.uint8).reshape(2, 2, 2), compress=True)


@responses.activate
@mark.parametrize(
    "status,calls,written",
    (
        param(200, 1, True, id="success"),
        param(202, 1, False, id="failure"),
        param(500, 4, False, id="failure-retried"),
    ),
)
def test_fetch_dataset(tmp_path, status, calls, written):
    responses.add(responses.GET, IMAGES_URL, body=PAYLOAD, status=status)
    destination = tmp_path / "mnist" / IMAGES_FILE

    result = fetch_dataset(IMAGES_URL, destination, REQUEST_TIMEOUT, REQUEST_RETRIES)

    assert len(responses.calls) == calls
    assert (result == destination) is written
    assert destination.exists() is written
    if written:
        assert destination.read_bytes() == PAYLOAD


@responses.activate
def test_fetch_dataset_sends_user_agent(tmp_path):
    responses.add(responses.GET, IMAGES_URL, body=PAYLOAD, status=200)
    fetch_dataset(IMAGES_URL, tmp_path / IMAGES_FILE)
    assert responses.calls[0].request.headers["User-Agent"].startswith("hyperfedsim:")


@responses.activate
def test_fetched_files_load(tmp_path):
    labels = idx_bytes(np.array([0, 1], dtype=np.uint8), compress=True)
    responses.add(responses.GET, IMAGES_URL, body=PAYLOAD, status=200)
    responses.add(responses.GET, f"{URL}/{LABELS_FILE}", body=labels, status=200)

    images_path = fetch_dataset(IMAGES_URL, tmp_path / IMAGES_FILE)
    labels_path = fetch_dataset(f"{URL}/{LABELS_FILE}", tmp_path / LABELS_FILE)
    dataset = load_idx(images_path, labels_path, num_classes=2)

    assert dataset.features.shape == (2, 1, 2, 2)
    assert dataset.labels.tolist() == [0, 1]


@responses.activate
def test_fetch_dataset_connection_error(tmp_path):
    assert fetch_dataset(IMAGES_URL, tmp_path / IMAGES_FILE) is None


def test_fetch_dataset_invalid_url(tmp_path):
    with pytest.raises(MissingSchema):
        fetch_dataset("localhost/datasets/file.gz", tmp_path / "file.gz")
