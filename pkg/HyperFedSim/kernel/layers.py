"""
Dense forward/backward kernels for every layer kind the model zoo uses.

Every forward returns ``(output, cache)``; the matching backward consumes the upstream
gradient plus that cache. Forward passes never mutate their inputs.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from HyperFedSim.constants import BN_EPS, BN_MOMENTUM
from HyperFedSim.exceptions import ShapeError
from HyperFedSim.utils import check_finite


@dataclass
class DenseCache:
    x: np.ndarray
    W: np.ndarray


@dataclass
class ConvCache:
    x_shape: Tuple[int, ...]
    windows: np.ndarray
    K: np.ndarray
    stride: int
    padding: int


@dataclass
class MaxPoolCache:
    x_shape: Tuple[int, ...]
    argmax: np.ndarray


@dataclass
class AvgPoolCache:
    x_shape: Tuple[int, ...]
    size: int


@dataclass
class ReluCache:
    mask: np.ndarray


@dataclass
class BatchNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    axes: Tuple[int, ...]
    training: bool


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ShapeError(message)


def dense_forward(
    x: np.ndarray, W: np.ndarray, b: np.ndarray
) -> Tuple[np.ndarray, DenseCache]:
    _require(x.ndim == 2 and W.ndim == 2, "dense expects x[batch,in] and W[in,out]")
    _require(
        x.shape[1] == W.shape[0],
        f"dense inner dimensions disagree: {x.shape} x {W.shape}",
    )
    _require(b.shape == (W.shape[1],), f"dense bias shape {b.shape} != ({W.shape[1]},)")
    y = x @ W + b
    check_finite("dense_forward", y)
    return y, DenseCache(x=x, W=W)


def dense_backward(
    grad_y: np.ndarray, cache: DenseCache
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    _require(
        grad_y.shape == (cache.x.shape[0], cache.W.shape[1]),
        f"dense upstream gradient shape {grad_y.shape} does not match output",
    )
    grad_x = grad_y @ cache.W.T
    grad_W = cache.x.T @ grad_y
    grad_b = grad_y.sum(axis=0)
    check_finite("dense_backward", grad_x, grad_W, grad_b)
    return grad_x, grad_W, grad_b


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d_forward(
    x: np.ndarray,
    K: np.ndarray,
    b: np.ndarray,
    stride: int = 1,
    padding: int = 0,
) -> Tuple[np.ndarray, ConvCache]:
    """
    Cross-correlation of ``x[batch,cin,h,w]`` with ``K[cout,cin,kh,kw]``.
    """
    _require(x.ndim == 4 and K.ndim == 4, "conv2d expects 4-d input and kernel")
    _require(x.shape[1] == K.shape[1], f"conv2d channels disagree: {x.shape} vs {K.shape}")
    _require(b.shape == (K.shape[0],), f"conv2d bias shape {b.shape} != ({K.shape[0]},)")
    _require(stride >= 1 and padding >= 0, "conv2d needs stride >= 1 and padding >= 0")
    kh, kw = K.shape[2], K.shape[3]
    _require(
        kh <= x.shape[2] + 2 * padding and kw <= x.shape[3] + 2 * padding,
        f"conv2d kernel {kh}x{kw} larger than padded input {x.shape[2:]}",
    )

    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[
        :, :, ::stride, ::stride
    ]
    # windows: [batch, cin, oh, ow, kh, kw]
    y = np.tensordot(windows, K, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    y = y + b[None, :, None, None]
    check_finite("conv2d_forward", y)
    return np.ascontiguousarray(y), ConvCache(
        x_shape=x.shape, windows=windows, K=K, stride=stride, padding=padding
    )


def conv2d_backward(
    grad_y: np.ndarray, cache: ConvCache
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    batch, _, oh, ow = cache.windows.shape[:4]
    cout, cin, kh, kw = cache.K.shape
    _require(
        grad_y.shape == (batch, cout, oh, ow),
        f"conv2d upstream gradient shape {grad_y.shape} != {(batch, cout, oh, ow)}",
    )
    stride, padding = cache.stride, cache.padding

    grad_K = np.tensordot(grad_y, cache.windows, axes=([0, 2, 3], [0, 2, 3]))
    grad_b = grad_y.sum(axis=(0, 2, 3))

    _, _, h, w = cache.x_shape
    grad_padded = np.zeros(
        (batch, cin, h + 2 * padding, w + 2 * padding), dtype=grad_y.dtype
    )
    for i in range(kh):
        for j in range(kw):
            # [batch, cout, oh, ow] x [cout, cin] -> [batch, oh, ow, cin]
            contribution = np.tensordot(grad_y, cache.K[:, :, i, j], axes=([1], [0]))
            grad_padded[
                :,
                :,
                i : i + stride * (oh - 1) + 1 : stride,
                j : j + stride * (ow - 1) + 1 : stride,
            ] += contribution.transpose(0, 3, 1, 2)
    grad_x = grad_padded[:, :, padding : padding + h, padding : padding + w]
    check_finite("conv2d_backward", grad_x, grad_K, grad_b)
    return np.ascontiguousarray(grad_x), grad_K, grad_b


def maxpool2_forward(x: np.ndarray) -> Tuple[np.ndarray, MaxPoolCache]:
    """
    2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    """
    _require(x.ndim == 4, "maxpool expects a 4-d input")
    batch, channels, h, w = x.shape
    _require(h >= 2 and w >= 2, f"maxpool needs spatial size >= 2, got {h}x{w}")
    oh, ow = h // 2, w // 2
    blocks = (
        x[:, :, : oh * 2, : ow * 2]
        .reshape(batch, channels, oh, 2, ow, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(batch, channels, oh, ow, 4)
    )
    argmax = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
    return y, MaxPoolCache(x_shape=x.shape, argmax=argmax)


def maxpool2_backward(grad_y: np.ndarray, cache: MaxPoolCache) -> np.ndarray:
    batch, channels, h, w = cache.x_shape
    oh, ow = h // 2, w // 2
    _require(
        grad_y.shape == (batch, channels, oh, ow),
        f"maxpool upstream gradient shape {grad_y.shape} != {(batch, channels, oh, ow)}",
    )
    routed = np.zeros((batch, channels, oh, ow, 4), dtype=grad_y.dtype)
    np.put_along_axis(routed, cache.argmax[..., None], grad_y[..., None], axis=-1)
    grad_x = np.zeros(cache.x_shape, dtype=grad_y.dtype)
    grad_x[:, :, : oh * 2, : ow * 2] = (
        routed.reshape(batch, channels, oh, ow, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(batch, channels, oh * 2, ow * 2)
    )
    return grad_x


def avgpool_forward(
    x: np.ndarray, size: Optional[int] = None
) -> Tuple[np.ndarray, AvgPoolCache]:
    """
    Non-overlapping average pooling; ``size=None`` pools the whole (square) spatial extent.
    """
    _require(x.ndim == 4, "avgpool expects a 4-d input")
    batch, channels, h, w = x.shape
    size = size or h
    _require(
        size >= 1 and h % size == 0 and w % size == 0,
        f"avgpool window {size} does not tile {h}x{w}",
    )
    y = x.reshape(batch, channels, h // size, size, w // size, size).mean(axis=(3, 5))
    return y, AvgPoolCache(x_shape=x.shape, size=size)


def avgpool_backward(grad_y: np.ndarray, cache: AvgPoolCache) -> np.ndarray:
    batch, channels, h, w = cache.x_shape
    size = cache.size
    _require(
        grad_y.shape == (batch, channels, h // size, w // size),
        f"avgpool upstream gradient shape {grad_y.shape} does not match output",
    )
    spread = np.broadcast_to(
        grad_y[:, :, :, None, :, None] / (size * size),
        (batch, channels, h // size, size, w // size, size),
    )
    return spread.reshape(cache.x_shape).copy()


def relu_forward(x: np.ndarray) -> Tuple[np.ndarray, ReluCache]:
    mask = x > 0
    return np.where(mask, x, 0.0).astype(x.dtype, copy=False), ReluCache(mask=mask)


def relu_backward(grad_y: np.ndarray, cache: ReluCache) -> np.ndarray:
    _require(grad_y.shape == cache.mask.shape, "relu upstream gradient shape mismatch")
    return np.where(cache.mask, grad_y, 0.0).astype(grad_y.dtype, copy=False)


def flatten_forward(x: np.ndarray) -> Tuple[np.ndarray, Tuple[int, ...]]:
    return x.reshape(x.shape[0], -1), x.shape


def flatten_backward(grad_y: np.ndarray, x_shape: Tuple[int, ...]) -> np.ndarray:
    return grad_y.reshape(x_shape)


def residual_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _require(a.shape == b.shape, f"residual branches disagree: {a.shape} vs {b.shape}")
    return a + b


def residual_add_backward(grad_y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return grad_y, grad_y.copy()


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tuple[np.ndarray, BatchNormCache, np.ndarray, np.ndarray]:
    """
    Per-channel normalization over ``x[batch,c]`` or ``x[batch,c,h,w]``.

    :return: (output, cache, new running mean, new running var). Running statistics are
        returned rather than updated in place; in eval mode they are passed through unchanged.
    """
    _require(x.ndim in (2, 4), "batchnorm expects a 2-d or 4-d input")
    channels = x.shape[1]
    _require(gamma.shape == (channels,), f"batchnorm expects {channels} channels")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    shape = (1, channels) + (1,) * (x.ndim - 2)

    if training:
        count = x.size // channels
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        unbiased = var * count / max(count - 1, 1)
        new_mean = (1.0 - momentum) * running_mean + momentum * mean
        new_var = (1.0 - momentum) * running_var + momentum * unbiased
    else:
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    y = gamma.reshape(shape) * x_hat + beta.reshape(shape)
    check_finite("batchnorm_forward", y)
    cache = BatchNormCache(
        x_hat=x_hat, inv_std=inv_std, gamma=gamma, axes=axes, training=training
    )
    return y, cache, new_mean, new_var


def batchnorm_backward(
    grad_y: np.ndarray, cache: BatchNormCache
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    _require(grad_y.shape == cache.x_hat.shape, "batchnorm upstream gradient shape mismatch")
    axes = cache.axes
    shape = (1, -1) + (1,) * (grad_y.ndim - 2)
    grad_gamma = (grad_y * cache.x_hat).sum(axis=axes)
    grad_beta = grad_y.sum(axis=axes)
    grad_x_hat = grad_y * cache.gamma.reshape(shape)
    inv_std = cache.inv_std.reshape(shape)

    if not cache.training:
        grad_x = grad_x_hat * inv_std
    else:
        count = grad_y.size // grad_y.shape[1]
        grad_x = (
            inv_std
            / count
            * (
                count * grad_x_hat
                - grad_x_hat.sum(axis=axes).reshape(shape)
                - cache.x_hat * (grad_x_hat * cache.x_hat).sum(axis=axes).reshape(shape)
            )
        )
    check_finite("batchnorm_backward", grad_x, grad_gamma, grad_beta)
    return grad_x, grad_gamma, grad_beta
