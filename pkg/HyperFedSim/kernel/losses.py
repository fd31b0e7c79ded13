from typing import Tuple

import numpy as np

from HyperFedSim.exceptions import ShapeError
from HyperFedSim.utils import check_finite


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> Tuple[float, np.ndarray]:
    """
    Mean cross-entropy over the batch and its gradient with respect to the logits.

    :param logits: Array of shape [batch, classes].
    :param labels: Integer class ids in [0, classes).
    :return: (loss, grad_logits) with grad_logits = (softmax - onehot) / batch.
    """
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"cross-entropy expects logits[batch,C] and labels[batch], got {logits.shape} and {labels.shape}"
        )
    batch, classes = logits.shape
    if batch == 0:
        raise ShapeError("cross-entropy needs a non-empty batch")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes})")

    log_probs = log_softmax(logits)
    rows = np.arange(batch)
    loss = float(-log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    grad /= batch
    check_finite("softmax_cross_entropy", grad)
    return loss, grad


def kd_loss(
    student_logits: np.ndarray, teacher_logits: np.ndarray, temperature: float
) -> Tuple[float, np.ndarray]:
    """
    Temperature-softened distillation loss ``T^2 * KL(softmax(t/T) || softmax(s/T))``.

    The loss is averaged over the batch; the teacher is treated as a constant so only the
    student gradient ``T * (softmax(s/T) - softmax(t/T)) / batch`` is returned.
    """
    if temperature <= 0:
        raise ValueError(f"distillation temperature must be positive, got {temperature}")
    if student_logits.shape != teacher_logits.shape or student_logits.ndim != 2:
        raise ShapeError(
            f"distillation logits disagree: {student_logits.shape} vs {teacher_logits.shape}"
        )
    batch = student_logits.shape[0]
    if batch == 0:
        raise ShapeError("distillation needs a non-empty batch")
    log_p_teacher = log_softmax(teacher_logits / temperature)
    log_p_student = log_softmax(student_logits / temperature)
    p_teacher = np.exp(log_p_teacher)

    kl = (p_teacher * (log_p_teacher - log_p_student)).sum(axis=1)
    loss = float(temperature**2 * kl.mean())
    grad = temperature * (np.exp(log_p_student) - p_teacher) / batch
    check_finite("kd_loss", grad)
    return loss, grad
