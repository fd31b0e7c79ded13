from pathlib import Path
from typing import Optional, Union

import requests
from requests.adapters import HTTPAdapter
from requests.exceptions import InvalidSchema, InvalidURL, MissingSchema
from urllib3 import Retry

from HyperFedSim.constants import REQUEST_RETRIES, REQUEST_TIMEOUT, SDK_NAME, SDK_VERSION
from HyperFedSim.utils import LOGGER, log_resp_info


# pylint: disable=broad-except
def fetch_dataset(
    url: str,
    destination: Union[str, Path],
    request_timeout: int = REQUEST_TIMEOUT,
    request_retries: int = REQUEST_RETRIES,
    custom_options: Optional[dict] = None,
) -> Optional[Path]:
    """
    Downloads a dataset file (IDX, gzip-compressed IDX or CIFAR binary batch).

    Notes:
    * If unsuccessful (i.e. not HTTP status code 200), the exception is caught and logged and
      ``None`` is returned, so a missing mirror never crashes a run that can fall back to local files.
    * Malformed URLs are re-raised.

    :param url: File URL.
    :param destination: Target file path; parent directories are created.
    :param request_timeout: Seconds before a request times out.
    :param request_retries: Retries on 500/502/504 responses.
    :param custom_options: Extra keyword arguments for ``requests`` (e.g. ``verify``).
    :return: Path of the written file, or None on failure.
    """
    custom_options = custom_options or {}
    destination = Path(destination)
    try:
        LOGGER.info("Fetching dataset file %s", url)
        adapter = HTTPAdapter(
            max_retries=Retry(total=request_retries, status_forcelist=[500, 502, 504])
        )
        with requests.Session() as session:
            session.mount("https://", adapter)
            session.mount("http://", adapter)
            resp = session.get(
                url,
                headers={"User-Agent": f"{SDK_NAME}:{SDK_VERSION}"},
                timeout=request_timeout,
                **custom_options,
            )

        if resp.status_code != 200:
            log_resp_info(resp)
            LOGGER.warning(
                "Dataset fetch failed due to unexpected HTTP status code: %s", resp.status_code
            )
            return None

        destination.parent.mkdir(parents=True, exist_ok=True)
        destination.write_bytes(resp.content)
        LOGGER.info("Wrote %s bytes to %s", len(resp.content), destination)
        return destination
    except (MissingSchema, InvalidSchema, InvalidURL) as exc:
        LOGGER.exception("Dataset fetch failed due to invalid URL: %s", exc)
        raise exc
    except Exception as exc:
        LOGGER.exception("Dataset fetch failed due to exception: %s", exc)

    return None
