from dataclasses import dataclass, field
from typing import List, Optional


@dataclass
class HeadGroup:
    """
    One shared head: ``tau`` channels, each mapping extractor features to an output slice.
    """

    key: str
    tau: int
    members: List[int] = field(default_factory=list)
    embedding: Optional[str] = None  # set when embeddings are shared per group


@dataclass
class ClientEntry:
    client_id: int
    parameter_count: int
    tau: int
    group_key: str
    embedding: str


@dataclass
class GlobalSlot:
    parameter_count: int
    tau: int
    group_key: str
    embedding: str = "embedding.global"


@dataclass(frozen=True)
class Registration:
    tau: int
    group_key: str
    embedding: str


@dataclass(frozen=True)
class FreezeHandle:
    """
    Returned by ``freeze_for_generalization``; lists what was frozen at the time of the call.
    """

    mode: str
    frozen: frozenset
