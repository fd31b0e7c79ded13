"""
Built-in client architectures: the full-scale LeNet-style, MLP, simplified VGG8 and
ResNet-10/12/18 models, plus desk-scale companions for fast runs and tests.
"""
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from HyperFedSim.exceptions import ArchitectureError

from .spec import ArchitectureSpec, LayerSpec, load_architecture

RESNET_BLOCKS = {10: (3, 3, 4), 12: (1, 5, 6), 18: (6, 6, 6)}


def _conv(name: str, cin: int, cout: int, k: int = 3) -> LayerSpec:
    return LayerSpec("conv2d", name, (cin, cout, k), padding=k // 2)


def _dense(name: str, n_in: int, n_out: int) -> LayerSpec:
    return LayerSpec("dense", name, (n_in, n_out))


def _relu(name: str) -> LayerSpec:
    return LayerSpec("relu", name)


def lenet_style(
    num_classes: int = 100,
    input_shape: Tuple[int, int, int] = (3, 32, 32),
    channels: Tuple[int, int] = (16, 32),
    hidden: Tuple[int, int] = (108, 64),
    name: str = "lenet",
) -> ArchitectureSpec:
    c, h, w = input_shape
    flat = channels[1] * (h // 4) * (w // 4)
    layers = [
        _conv("conv1", c, channels[0]),
        _relu("relu1"),
        LayerSpec("maxpool", "pool1"),
        _conv("conv2", channels[0], channels[1]),
        _relu("relu2"),
        LayerSpec("maxpool", "pool2"),
        LayerSpec("flatten", "flatten"),
        _dense("fc1", flat, hidden[0]),
        _relu("relu3"),
        _dense("fc2", hidden[0], hidden[1]),
        _relu("relu4"),
        _dense("fc3", hidden[1], num_classes),
    ]
    return ArchitectureSpec(name, input_shape, num_classes, tuple(layers))


def mlp(
    num_classes: int = 100,
    input_dim: int = 3072,
    hidden: Sequence[int] = (128, 64),
    name: str = "mlp",
) -> ArchitectureSpec:
    widths = [input_dim, *hidden, num_classes]
    layers: List[LayerSpec] = []
    for index in range(len(widths) - 1):
        layers.append(_dense(f"fc{index + 1}", widths[index], widths[index + 1]))
        if index < len(widths) - 2:
            layers.append(_relu(f"relu{index + 1}"))
    return ArchitectureSpec(name, (input_dim,), num_classes, tuple(layers))


def vgg8(
    num_classes: int = 100,
    input_shape: Tuple[int, int, int] = (3, 32, 32),
    channels: Tuple[int, int, int] = (16, 32, 64),
    linear1_out: int = 108,
    linear2_out: int = 64,
    name: str = "vgg8",
) -> ArchitectureSpec:
    c, h, w = input_shape
    layers: List[LayerSpec] = []
    cin = c
    for stage, cout in enumerate(channels):
        first, second = 2 * stage + 1, 2 * stage + 2
        layers += [
            _conv(f"conv{first}", cin, cout),
            _relu(f"relu{first}"),
            _conv(f"conv{second}", cout, cout),
            _relu(f"relu{second}"),
            LayerSpec("maxpool", f"pool{stage + 1}"),
        ]
        cin = cout
    flat = channels[-1] * (h // 8) * (w // 8)
    layers += [
        LayerSpec("flatten", "flatten"),
        _dense("linear1", flat, linear1_out),
        _relu("relu7"),
        _dense("linear2", linear1_out, linear2_out),
        _relu("relu8"),
        _dense("linear3", linear2_out, num_classes),
    ]
    return ArchitectureSpec(name, input_shape, num_classes, tuple(layers))


def resnet(
    depth: int = 10,
    num_classes: int = 100,
    input_shape: Tuple[int, int, int] = (3, 32, 32),
    widths: Tuple[int, int, int] = (16, 32, 64),
    name: Optional[str] = None,
) -> ArchitectureSpec:
    if depth not in RESNET_BLOCKS:
        raise ArchitectureError(f"ResNet depth must be one of {sorted(RESNET_BLOCKS)}")
    layers: List[LayerSpec] = [
        LayerSpec("conv2d", "conv1", (input_shape[0], widths[0], 3), padding=1, bias=False),
        LayerSpec("batchnorm", "bn1", (widths[0],)),
        _relu("relu1"),
    ]
    cin = widths[0]
    for group, (cout, blocks) in enumerate(zip(widths, RESNET_BLOCKS[depth])):
        for block in range(blocks):
            stride = 2 if group > 0 and block == 0 else 1
            layers.append(
                LayerSpec(
                    "residual-block",
                    f"layer{group + 1}.{block}",
                    (cin, cout),
                    stride=stride,
                )
            )
            cin = cout
    layers += [
        LayerSpec("avgpool", "avgpool"),
        LayerSpec("flatten", "flatten"),
        _dense("fc", cin, num_classes),
    ]
    return ArchitectureSpec(
        name or f"resnet{depth}", input_shape, num_classes, tuple(layers)
    )


def tiny_mlp(
    num_classes: int = 10, input_dim: int = 64, hidden: int = 16, name: str = "tiny-mlp"
) -> ArchitectureSpec:
    return mlp(num_classes, input_dim, (hidden,), name=name)


def tiny_cnn(
    num_classes: int = 10,
    input_shape: Tuple[int, int, int] = (3, 8, 8),
    channels: int = 8,
    name: str = "tiny-cnn",
) -> ArchitectureSpec:
    c, h, w = input_shape
    layers = (
        _conv("conv1", c, channels),
        _relu("relu1"),
        LayerSpec("maxpool", "pool1"),
        LayerSpec("flatten", "flatten"),
        _dense("fc1", channels * (h // 2) * (w // 2), num_classes),
    )
    return ArchitectureSpec(name, input_shape, num_classes, layers)


def _image_shape(input_shape: Tuple[int, ...]) -> Tuple[int, int, int]:
    if len(input_shape) == 3:
        return input_shape  # type: ignore[return-value]
    raise ArchitectureError(f"Convolutional models need an image input, got {input_shape}")


def _flat_dim(input_shape: Tuple[int, ...]) -> int:
    total = 1
    for size in input_shape:
        total *= size
    return total


ArchBuilder = Callable[[int, Tuple[int, ...]], ArchitectureSpec]

BUILTIN_ARCHITECTURES: Dict[str, ArchBuilder] = {
    "lenet": lambda c, s: lenet_style(c, _image_shape(s)),
    "mlp": lambda c, s: mlp(c, _flat_dim(s)),
    "vgg8": lambda c, s: vgg8(c, _image_shape(s)),
    "resnet10": lambda c, s: resnet(10, c, _image_shape(s)),
    "resnet12": lambda c, s: resnet(12, c, _image_shape(s)),
    "resnet18": lambda c, s: resnet(18, c, _image_shape(s)),
    "tiny-mlp": lambda c, s: tiny_mlp(c, _flat_dim(s)),
    "tiny-cnn": lambda c, s: tiny_cnn(c, _image_shape(s)),
    "tiny-lenet": lambda c, s: lenet_style(
        c, _image_shape(s), channels=(4, 8), hidden=(16, 16), name="tiny-lenet"
    ),
    "tiny-vgg8": lambda c, s: vgg8(
        c,
        _image_shape(s),
        channels=(4, 8, 8),
        linear1_out=16,
        linear2_out=16,
        name="tiny-vgg8",
    ),
    "tiny-resnet10": lambda c, s: resnet(
        10, c, _image_shape(s), widths=(4, 8, 8), name="tiny-resnet10"
    ),
}


def get_architecture(
    name: str, num_classes: int, input_shape: Tuple[int, ...]
) -> ArchitectureSpec:
    """
    Resolves a built-in architecture by name, or loads one from a ``.json`` file.
    """
    if name.endswith(".json"):
        arch = load_architecture(Path(name))
        if arch.num_classes != num_classes or arch.input_shape != tuple(input_shape):
            raise ArchitectureError(
                f"{name} is built for {arch.input_shape} -> {arch.num_classes} classes, "
                f"dataset provides {tuple(input_shape)} -> {num_classes}"
            )
        return arch
    if name not in BUILTIN_ARCHITECTURES:
        raise ArchitectureError(
            f"Unknown architecture '{name}', expected one of {sorted(BUILTIN_ARCHITECTURES)}"
        )
    return BUILTIN_ARCHITECTURES[name](num_classes, tuple(input_shape))
