from typing import Callable, Optional, Tuple

from HyperFedSim.utils import LOGGER

ProgressSource = Callable[[], Tuple[int, int, Optional[float]]]


def report_progress(algorithm: str, progress: ProgressSource) -> None:
    """
    Logs the latest completed round and its mean accuracy. Only reads what ``progress`` returns.

    :param algorithm: Name shown in the log line.
    :param progress: Returns ``(completed round, total rounds, mean accuracy or None)``.
    """
    completed, total, accuracy = progress()
    if completed == 0:
        LOGGER.debug("%s: no round completed yet.", algorithm)
        return
    if accuracy is None:
        LOGGER.info("%s: round %s/%s complete", algorithm, completed, total)
    else:
        LOGGER.info(
            "%s: round %s/%s complete, mean accuracy %.4f", algorithm, completed, total, accuracy
        )
