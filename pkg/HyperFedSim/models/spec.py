import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from HyperFedSim.exceptions import ArchitectureError
from HyperFedSim.kernel.layers import conv_output_size

LAYER_KINDS = (
    "dense",
    "conv2d",
    "maxpool",
    "avgpool",
    "relu",
    "flatten",
    "batchnorm",
    "residual-block",
)
PARAMETERLESS_KINDS = ("maxpool", "avgpool", "relu", "flatten")
LAYER_FLAGS = ("generated", "local", "frozen", "local_norm")

Shape = Tuple[int, ...]


@dataclass(frozen=True)
class ParamSlot:
    """
    One parameter tensor of an architecture, in canonical packing order.
    """

    name: str
    shape: Shape
    layer: str
    running: bool = False
    local: bool = False
    frozen: bool = False

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


@dataclass(frozen=True)
class LayerSpec:
    """
    Declarative description of one layer.

    ``shape`` is interpreted per kind: dense ``(in, out)``, conv2d ``(cin, cout, k)``,
    batchnorm ``(channels,)``, avgpool ``(size,)`` or ``()`` for a global pool,
    residual-block ``(cin, cout)``; the other kinds take ``()``.
    """

    kind: str
    name: str
    shape: Shape = ()
    stride: int = 1
    padding: int = 0
    bias: bool = True
    local: bool = False
    frozen: bool = False
    local_norm: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ArchitectureError(f"Unknown layer kind '{self.kind}' for {self.name}")
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        expected = {"dense": 2, "conv2d": 3, "batchnorm": 1, "residual-block": 2}
        if self.kind in expected and len(self.shape) != expected[self.kind]:
            raise ArchitectureError(
                f"{self.kind} layer {self.name} expects {expected[self.kind]} shape entries, got {self.shape}"
            )
        if self.local_norm and self.kind != "residual-block":
            raise ArchitectureError(f"local_norm only applies to residual blocks ({self.name})")

    @property
    def has_params(self) -> bool:
        return self.kind not in PARAMETERLESS_KINDS

    @property
    def generated(self) -> bool:
        return self.has_params and not self.local

    @property
    def weight_layers(self) -> int:
        if self.kind in ("dense", "conv2d"):
            return 1
        if self.kind == "residual-block":
            return 3 if self.has_projection else 2
        return 0

    @property
    def has_projection(self) -> bool:
        return self.kind == "residual-block" and (
            self.stride != 1 or self.shape[0] != self.shape[1]
        )

    def param_slots(self) -> List[ParamSlot]:
        def slot(suffix: str, shape: Shape, running: bool = False, norm: bool = False):
            return ParamSlot(
                name=f"{self.name}.{suffix}",
                shape=shape,
                layer=self.name,
                running=running,
                local=self.local or (norm and self.local_norm),
                frozen=self.frozen,
            )

        def norm_slots(prefix: str, channels: int) -> List[ParamSlot]:
            return [
                slot(f"{prefix}gamma", (channels,), norm=True),
                slot(f"{prefix}beta", (channels,), norm=True),
                slot(f"{prefix}running_mean", (channels,), running=True, norm=True),
                slot(f"{prefix}running_var", (channels,), running=True, norm=True),
            ]

        if self.kind == "dense":
            slots = [slot("weight", self.shape)]
            if self.bias:
                slots.append(slot("bias", (self.shape[1],)))
            return slots
        if self.kind == "conv2d":
            cin, cout, k = self.shape
            slots = [slot("weight", (cout, cin, k, k))]
            if self.bias:
                slots.append(slot("bias", (cout,)))
            return slots
        if self.kind == "batchnorm":
            return norm_slots("", self.shape[0])
        if self.kind == "residual-block":
            cin, cout = self.shape
            slots = [slot("conv1.weight", (cout, cin, 3, 3))]
            slots += norm_slots("bn1.", cout)
            slots.append(slot("conv2.weight", (cout, cout, 3, 3)))
            slots += norm_slots("bn2.", cout)
            if self.has_projection:
                slots.append(slot("shortcut.weight", (cout, cin, 1, 1)))
                slots += norm_slots("shortcut_bn.", cout)
            return slots
        return []

    def output_shape(self, input_shape: Shape) -> Shape:
        def fail(reason: str):
            raise ArchitectureError(
                f"Layer {self.name} ({self.kind}) cannot take input {input_shape}: {reason}"
            )

        if self.kind == "dense":
            if input_shape != (self.shape[0],):
                fail(f"expects ({self.shape[0]},)")
            return (self.shape[1],)
        if self.kind in ("conv2d", "residual-block"):
            cin, cout = self.shape[0], self.shape[1]
            if len(input_shape) != 3 or input_shape[0] != cin:
                fail(f"expects ({cin}, h, w)")
            if self.kind == "conv2d":
                k, padding = self.shape[2], self.padding
            else:
                k, padding = 3, 1
            h = conv_output_size(input_shape[1], k, self.stride, padding)
            w = conv_output_size(input_shape[2], k, self.stride, padding)
            if h < 1 or w < 1:
                fail("kernel larger than padded input")
            return (cout, h, w)
        if self.kind == "maxpool":
            if len(input_shape) != 3 or min(input_shape[1:]) < 2:
                fail("expects (c, h, w) with h, w >= 2")
            return (input_shape[0], input_shape[1] // 2, input_shape[2] // 2)
        if self.kind == "avgpool":
            if len(input_shape) != 3:
                fail("expects (c, h, w)")
            size = self.shape[0] if self.shape else input_shape[1]
            if input_shape[1] % size or input_shape[2] % size:
                fail(f"window {size} does not tile the input")
            return (input_shape[0], input_shape[1] // size, input_shape[2] // size)
        if self.kind == "flatten":
            return (int(np.prod(input_shape)),)
        if self.kind == "batchnorm":
            if input_shape[0] != self.shape[0]:
                fail(f"expects {self.shape[0]} channels")
            return input_shape
        return input_shape

    def to_dict(self) -> Dict[str, Any]:
        entry: Dict[str, Any] = {"kind": self.kind, "name": self.name, "shape": list(self.shape)}
        if self.stride != 1:
            entry["stride"] = self.stride
        if self.padding:
            entry["padding"] = self.padding
        if not self.bias:
            entry["bias"] = False
        flags = [
            flag
            for flag, active in (
                ("local", self.local),
                ("frozen", self.frozen),
                ("local_norm", self.local_norm),
            )
            if active
        ]
        if flags:
            entry["flags"] = flags
        return entry

    @classmethod
    def from_dict(cls, entry: Dict[str, Any]) -> "LayerSpec":
        unknown = set(entry) - {"kind", "name", "shape", "stride", "padding", "bias", "flags"}
        if unknown:
            raise ArchitectureError(f"Unknown layer keys: {sorted(unknown)}")
        flags = set(entry.get("flags", []))
        if flags - set(LAYER_FLAGS):
            raise ArchitectureError(f"Unknown layer flags: {sorted(flags - set(LAYER_FLAGS))}")
        if {"generated", "local"} <= flags:
            raise ArchitectureError(
                f"Layer {entry.get('name')} cannot be both generated and local-only"
            )
        try:
            return cls(
                kind=entry["kind"],
                name=entry["name"],
                shape=tuple(entry.get("shape", ())),
                stride=int(entry.get("stride", 1)),
                padding=int(entry.get("padding", 0)),
                bias=bool(entry.get("bias", True)),
                local="local" in flags,
                frozen="frozen" in flags,
                local_norm="local_norm" in flags,
            )
        except KeyError as exc:
            raise ArchitectureError(f"Layer entry missing key {exc}") from exc


@dataclass(frozen=True)
class ArchitectureSpec:
    """
    An ordered, shape-checked stack of layers. Immutable and safe to share between clients.
    """

    name: str
    input_shape: Shape
    num_classes: int
    layers: Tuple[LayerSpec, ...]
    _shapes: Tuple[Shape, ...] = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ArchitectureError(f"Duplicate layer names in {self.name}")

        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(layer.output_shape(shapes[-1]))
        if shapes[-1] != (self.num_classes,):
            raise ArchitectureError(
                f"{self.name} produces {shapes[-1]}, expected ({self.num_classes},)"
            )
        object.__setattr__(self, "_shapes", tuple(shapes))

    @property
    def shapes(self) -> Tuple[Shape, ...]:
        """Activation shapes, input first, one per layer output."""
        return self._shapes

    @property
    def depth(self) -> int:
        return sum(layer.weight_layers for layer in self.layers)

    def param_slots(self) -> List[ParamSlot]:
        return [slot for layer in self.layers for slot in layer.param_slots()]

    def generated_slots(self) -> List[ParamSlot]:
        return [slot for slot in self.param_slots() if not slot.local]

    def local_slots(self) -> List[ParamSlot]:
        return [slot for slot in self.param_slots() if slot.local]

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise ArchitectureError(f"{self.name} has no layer {name}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "ArchitectureSpec":
        unknown = set(document) - {"name", "input_shape", "num_classes", "layers"}
        if unknown:
            raise ArchitectureError(f"Unknown architecture keys: {sorted(unknown)}")
        try:
            return cls(
                name=document["name"],
                input_shape=tuple(document["input_shape"]),
                num_classes=int(document["num_classes"]),
                layers=tuple(LayerSpec.from_dict(entry) for entry in document["layers"]),
            )
        except KeyError as exc:
            raise ArchitectureError(f"Architecture document missing key {exc}") from exc


def with_flags(
    arch: ArchitectureSpec,
    local: Iterable[str] = (),
    frozen: Iterable[str] = (),
    local_norm: Iterable[str] = (),
    name: Optional[str] = None,
) -> ArchitectureSpec:
    """
    Derives a per-client variant of ``arch`` with some layers kept local, frozen, or with
    their normalization tensors kept local.
    """
    local, frozen, local_norm = set(local), set(frozen), set(local_norm)
    known = {layer.name for layer in arch.layers}
    missing = (local | frozen | local_norm) - known
    if missing:
        raise ArchitectureError(f"{arch.name} has no layers {sorted(missing)}")
    layers = tuple(
        replace(
            layer,
            local=layer.local or layer.name in local,
            frozen=layer.frozen or layer.name in frozen,
            local_norm=layer.local_norm or layer.name in local_norm,
        )
        for layer in arch.layers
    )
    return ArchitectureSpec(
        name=name or arch.name,
        input_shape=arch.input_shape,
        num_classes=arch.num_classes,
        layers=layers,
    )


def load_architecture(path: Union[str, Path]) -> ArchitectureSpec:
    """
    Loads an architecture from a JSON document with keys ``name``, ``input_shape``,
    ``num_classes`` and ``layers`` (each layer: ``kind``, ``name``, ``shape`` and optional
    ``stride``, ``padding``, ``bias``, ``flags``).
    """
    with open(path, "r", encoding="utf8") as arch_file:
        try:
            document = json.load(arch_file)
        except json.JSONDecodeError as exc:
            raise ArchitectureError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return ArchitectureSpec.from_dict(document)


def dump_architecture(arch: ArchitectureSpec, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf8") as arch_file:
        json.dump(arch.to_dict(), arch_file, indent=2)
