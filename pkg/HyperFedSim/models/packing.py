"""
Canonical flat-parameter packing.

Order is fixed: layers in declaration order; within a layer, its slots in ``param_slots()`` order
(weight, then bias; BatchNorm gamma, beta, running mean, running var); each tensor row-major.
Only generated slots (not local-only) are packed.
"""
from dataclasses import dataclass
from typing import Dict, Mapping

import numpy as np

from HyperFedSim.exceptions import ShapeError

from .spec import ArchitectureSpec


@dataclass(frozen=True)
class FlatParams:
    values: np.ndarray
    arch_name: str

    def __len__(self) -> int:
        return int(self.values.shape[0])


def flat_param_count(arch: ArchitectureSpec) -> int:
    return sum(slot.size for slot in arch.generated_slots())


def pack(weights: Mapping[str, np.ndarray], arch: ArchitectureSpec, dtype=None) -> FlatParams:
    pieces = []
    for slot in arch.generated_slots():
        if slot.name not in weights:
            raise ShapeError(f"{arch.name}: missing tensor {slot.name}")
        tensor = np.asarray(weights[slot.name])
        if tensor.shape != slot.shape:
            raise ShapeError(
                f"{arch.name}: tensor {slot.name} has shape {tensor.shape}, expected {slot.shape}"
            )
        pieces.append(tensor.reshape(-1))
    if pieces:
        values = np.concatenate(pieces)
    else:
        values = np.zeros(0, dtype=dtype or np.float64)
    if dtype is not None:
        values = values.astype(dtype, copy=False)
    return FlatParams(values=values, arch_name=arch.name)


def unpack(flat, arch: ArchitectureSpec) -> Dict[str, np.ndarray]:
    """
    Splits a flat vector (``FlatParams`` or a plain 1-d array) into named tensors. The returned
    tensors are copies, so the flat vector may be reused.
    """
    values = flat.values if isinstance(flat, FlatParams) else np.asarray(flat)
    expected = flat_param_count(arch)
    if values.ndim != 1 or values.shape[0] != expected:
        raise ShapeError(
            f"{arch.name} needs {expected} parameters, got vector of shape {values.shape}"
        )
    weights = {}
    offset = 0
    for slot in arch.generated_slots():
        weights[slot.name] = values[offset : offset + slot.size].reshape(slot.shape).copy()
        offset += slot.size
    return weights
