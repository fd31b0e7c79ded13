# ruff: noqa: F401
from .hypernetwork import FREEZE_MODES, Hypernetwork
from .registry import ClientEntry, FreezeHandle, GlobalSlot, HeadGroup, Registration
