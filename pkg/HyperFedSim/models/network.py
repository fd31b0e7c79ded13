"""
A trainable client model: named parameter tensors plus forward/backward over an ArchitectureSpec.
"""
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from HyperFedSim.exceptions import ShapeError
from HyperFedSim.kernel import (
    SgdState,
    avgpool_backward,
    avgpool_forward,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    flatten_backward,
    flatten_forward,
    kd_loss,
    maxpool2_backward,
    maxpool2_forward,
    relu_backward,
    relu_forward,
    residual_add,
    residual_add_backward,
    sgd_step,
    softmax_cross_entropy,
)

from .packing import FlatParams, pack, unpack
from .spec import ArchitectureSpec, LayerSpec, ParamSlot

Params = Dict[str, np.ndarray]
Objective = Callable[[np.ndarray, np.ndarray, np.ndarray], Tuple[float, np.ndarray]]


class StepResult(NamedTuple):
    loss: float
    correct: int


def _init_slot(slot: ParamSlot, fan_in: int, rng: np.random.Generator, dtype) -> np.ndarray:
    suffix = slot.name.rsplit(".", 1)[-1]
    if suffix in ("gamma", "running_var"):
        return np.ones(slot.shape, dtype=dtype)
    if suffix in ("beta", "running_mean"):
        return np.zeros(slot.shape, dtype=dtype)
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=slot.shape).astype(dtype)


def build_model(
    arch: ArchitectureSpec, rng: Optional[np.random.Generator] = None, dtype=np.float64
) -> "Model":
    """
    Creates a model with fan-in uniform weights and identity BatchNorm.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    params: Params = {}
    for slot in arch.param_slots():
        shape = slot.shape
        if slot.name.endswith(".bias"):
            weight_shape = params[slot.name[: -len("bias")] + "weight"].shape
            fan_in = int(np.prod(weight_shape[1:])) if len(weight_shape) == 4 else weight_shape[0]
        elif len(shape) == 4:
            fan_in = int(np.prod(shape[1:]))
        elif len(shape) == 2:
            fan_in = shape[0]
        else:
            fan_in = 1
        params[slot.name] = _init_slot(slot, fan_in, rng, dtype)
    return Model(arch, params)


class Model:
    """
    Single-owner model instance. ``forward`` in training mode updates BatchNorm running
    statistics of non-frozen layers and remembers what ``backward`` needs.
    """

    def __init__(self, arch: ArchitectureSpec, params: Params) -> None:
        expected = {slot.name: slot.shape for slot in arch.param_slots()}
        if set(params) != set(expected):
            raise ShapeError(f"{arch.name}: parameter names do not match the architecture")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ShapeError(f"{arch.name}: {name} has shape {params[name].shape}, expected {shape}")
        self.arch = arch
        self.params = params
        self._caches: Optional[List[Any]] = None

    # Parameter views
    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype if self.params else np.float64

    def trainable_names(self) -> List[str]:
        return [
            slot.name
            for slot in self.arch.param_slots()
            if not slot.running and not slot.frozen
        ]

    def flat(self) -> FlatParams:
        return pack(self.params, self.arch)

    def load_flat(self, flat) -> None:
        self.params.update(unpack(flat, self.arch))

    def copy(self) -> "Model":
        return Model(self.arch, {name: value.copy() for name, value in self.params.items()})

    # Forward / backward
    def _prepare(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        try:
            return x.reshape((x.shape[0],) + self.arch.input_shape)
        except ValueError as exc:
            raise ShapeError(
                f"{self.arch.name} expects inputs of shape {self.arch.input_shape}, got {x.shape[1:]}"
            ) from exc

    def _conv(self, x, name, stride, padding, bias):
        kernel = self.params[f"{name}.weight"]
        b = self.params[f"{name}.bias"] if bias else np.zeros(kernel.shape[0], dtype=kernel.dtype)
        return conv2d_forward(x, kernel, b, stride=stride, padding=padding)

    def _norm(self, x, prefix: str, training: bool, update_running: bool):
        y, cache, mean, var = batchnorm_forward(
            x,
            self.params[f"{prefix}gamma"],
            self.params[f"{prefix}beta"],
            self.params[f"{prefix}running_mean"],
            self.params[f"{prefix}running_var"],
            training,
        )
        if training and update_running:
            self.params[f"{prefix}running_mean"] = mean
            self.params[f"{prefix}running_var"] = var
        return y, cache

    def _residual_forward(self, layer: LayerSpec, x: np.ndarray, training: bool):
        n = layer.name
        update = not layer.frozen
        h, c1 = self._conv(x, f"{n}.conv1", layer.stride, 1, False)
        h, n1 = self._norm(h, f"{n}.bn1.", training, update)
        h, r1 = relu_forward(h)
        h, c2 = self._conv(h, f"{n}.conv2", 1, 1, False)
        h, n2 = self._norm(h, f"{n}.bn2.", training, update)
        if layer.has_projection:
            s, sc = self._conv(x, f"{n}.shortcut", layer.stride, 0, False)
            s, sn = self._norm(s, f"{n}.shortcut_bn.", training, update)
        else:
            s, sc, sn = x, None, None
        y, r2 = relu_forward(residual_add(h, s))
        return y, (c1, n1, r1, c2, n2, sc, sn, r2)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        h = self._prepare(x)
        caches: List[Any] = []
        for layer in self.arch.layers:
            kind = layer.kind
            if kind == "dense":
                bias = self.params.get(f"{layer.name}.bias")
                weight = self.params[f"{layer.name}.weight"]
                if bias is None:
                    bias = np.zeros(weight.shape[1], dtype=weight.dtype)
                h, cache = dense_forward(h, weight, bias)
            elif kind == "conv2d":
                h, cache = self._conv(h, layer.name, layer.stride, layer.padding, layer.bias)
            elif kind == "maxpool":
                h, cache = maxpool2_forward(h)
            elif kind == "avgpool":
                h, cache = avgpool_forward(h, layer.shape[0] if layer.shape else None)
            elif kind == "relu":
                h, cache = relu_forward(h)
            elif kind == "flatten":
                h, cache = flatten_forward(h)
            elif kind == "batchnorm":
                h, cache = self._norm(h, f"{layer.name}.", training, not layer.frozen)
            else:
                h, cache = self._residual_forward(layer, h, training)
            caches.append(cache)
        self._caches = caches if training else None
        return h

    def _residual_backward(self, layer: LayerSpec, grad: np.ndarray, cache, grads: Params):
        n = layer.name
        c1, n1, r1, c2, n2, sc, sn, r2 = cache
        grad = relu_backward(grad, r2)
        grad_main, grad_short = residual_add_backward(grad)
        g, grads[f"{n}.bn2.gamma"], grads[f"{n}.bn2.beta"] = batchnorm_backward(grad_main, n2)
        g, grads[f"{n}.conv2.weight"], _ = conv2d_backward(g, c2)
        g = relu_backward(g, r1)
        g, grads[f"{n}.bn1.gamma"], grads[f"{n}.bn1.beta"] = batchnorm_backward(g, n1)
        grad_x, grads[f"{n}.conv1.weight"], _ = conv2d_backward(g, c1)
        if sc is not None:
            s, grads[f"{n}.shortcut_bn.gamma"], grads[f"{n}.shortcut_bn.beta"] = (
                batchnorm_backward(grad_short, sn)
            )
            s, grads[f"{n}.shortcut.weight"], _ = conv2d_backward(s, sc)
            return grad_x + s
        return grad_x + grad_short

    def backward(self, grad_logits: np.ndarray) -> Params:
        """
        Gradients for every non-running parameter from the last training-mode forward.
        """
        if self._caches is None:
            raise ShapeError("backward called without a training-mode forward pass")
        grads: Params = {}
        grad = grad_logits
        for layer, cache in zip(reversed(self.arch.layers), reversed(self._caches)):
            kind, n = layer.kind, layer.name
            if kind == "dense":
                grad, grad_w, grad_b = dense_backward(grad, cache)
                grads[f"{n}.weight"] = grad_w
                if layer.bias:
                    grads[f"{n}.bias"] = grad_b
            elif kind == "conv2d":
                grad, grad_k, grad_b = conv2d_backward(grad, cache)
                grads[f"{n}.weight"] = grad_k
                if layer.bias:
                    grads[f"{n}.bias"] = grad_b
            elif kind == "maxpool":
                grad = maxpool2_backward(grad, cache)
            elif kind == "avgpool":
                grad = avgpool_backward(grad, cache)
            elif kind == "relu":
                grad = relu_backward(grad, cache)
            elif kind == "flatten":
                grad = flatten_backward(grad, cache)
            elif kind == "batchnorm":
                grad, grads[f"{n}.gamma"], grads[f"{n}.beta"] = batchnorm_backward(grad, cache)
            else:
                grad = self._residual_backward(layer, grad, cache, grads)
        self._caches = None
        return grads

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, training=False)


def cross_entropy_objective(
    logits: np.ndarray, x: np.ndarray, y: np.ndarray
) -> Tuple[float, np.ndarray]:
    return softmax_cross_entropy(logits, y)


class DistillationObjective:
    """
    ``lam * CE + (1 - lam) * KD(T)`` against a fixed teacher model.
    With ``lam == 1`` the teacher is never consulted and the loss is plain cross-entropy.
    """

    def __init__(self, teacher: Optional[Model], lam: float, temperature: float) -> None:
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {lam}")
        if lam < 1.0 and teacher is None:
            raise ValueError("distillation needs a teacher model")
        self.teacher = teacher
        self.lam = lam
        self.temperature = temperature

    def __call__(self, logits: np.ndarray, x: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
        ce_loss, ce_grad = softmax_cross_entropy(logits, y)
        if self.lam == 1.0:
            return ce_loss, ce_grad
        teacher_logits = self.teacher.predict(x)  # type: ignore[union-attr]
        kd, kd_grad = kd_loss(logits, teacher_logits.astype(logits.dtype), self.temperature)
        loss = self.lam * ce_loss + (1.0 - self.lam) * kd
        return loss, self.lam * ce_grad + (1.0 - self.lam) * kd_grad


def local_train_step(
    model: Model,
    x: np.ndarray,
    y: np.ndarray,
    state: SgdState,
    objective: Optional[Objective] = None,
) -> StepResult:
    """
    One SGD step on a batch. Frozen layers and BatchNorm running statistics are left out of the
    optimizer; local-only layers are trained like any other.
    """
    objective = objective or cross_entropy_objective
    logits = model.forward(x, training=True)
    loss, grad_logits = objective(logits, x, y)
    grads = model.backward(grad_logits)
    trainable = set(model.trainable_names())
    grads = {name: grad for name, grad in grads.items() if name in trainable}
    model.params.update(sgd_step(model.params, grads, state))
    correct = int((logits.argmax(axis=1) == np.asarray(y)).sum())
    return StepResult(loss=loss, correct=correct)
