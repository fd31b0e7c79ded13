from typing import Tuple

import numpy as np

from HyperFedSim.exceptions import DatasetError
from HyperFedSim.kernel import softmax_cross_entropy
from HyperFedSim.models import Model

EVAL_BATCH = 512


def evaluate(model: Model, features: np.ndarray, labels: np.ndarray) -> Tuple[float, float]:
    """
    Top-1 accuracy and mean cross-entropy in eval mode (BatchNorm uses running statistics).
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DatasetError("cannot evaluate on an empty split")
    correct, loss_sum = 0, 0.0
    for start in range(0, labels.size, EVAL_BATCH):
        batch_x = features[start : start + EVAL_BATCH]
        batch_y = labels[start : start + EVAL_BATCH]
        logits = model.predict(batch_x)
        loss, _ = softmax_cross_entropy(logits, batch_y)
        loss_sum += loss * batch_y.size
        correct += int((logits.argmax(axis=1) == batch_y).sum())
    return correct / labels.size, loss_sum / labels.size
