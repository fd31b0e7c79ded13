"""
Server-side hypernetwork: per-client embedding chunks, a shared feature extractor and head groups
keyed by chunk count. The server only ever sees parameter counts and flat update vectors.
"""
import copy
import hashlib
import threading
from dataclasses import asdict
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from HyperFedSim.constants import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    EMBEDDING_DIM,
    GROUPING_MODES,
    HIDDEN_DIM,
    HIDDEN_LAYERS,
    HYPERNET_LR,
    OUTPUT_DIM,
)
from HyperFedSim.exceptions import RegistryError, ShapeError, StaleUpdateError
from HyperFedSim.kernel import (
    AdamState,
    adam_step,
    dense_backward,
    dense_forward,
    relu_backward,
    relu_forward,
)
from HyperFedSim.utils import LOGGER, check_finite, chunk_count, make_rng

from .registry import ClientEntry, FreezeHandle, GlobalSlot, HeadGroup, Registration

Params = Dict[str, np.ndarray]
FREEZE_MODES = ("embeddings-only", "new-head")


class Hypernetwork:
    """
    Generates flat parameter vectors of arbitrary length K from ``ceil(K / N)`` embedding rows.

    :param output_dim: Width N of one generated chunk.
    :param embedding_dim: Embedding row dimension d.
    :param hidden_dim: Extractor width h.
    :param hidden_layers: Number of dense layers in the extractor (ReLU between them).
    :param grouping: Head grouping key: "tau" (chunk count), "exact" (parameter count) or "client".
    :param no_head: Drop heads entirely; the extractor's last layer emits chunks of width N.
    :param share_embeddings: One embedding matrix per head group instead of one per client.
    :param learning_rate: Adam learning rate for every hypernetwork parameter and embedding.
    :param seed: Master seed for initialization.
    """

    def __init__(
        self,
        output_dim: int = OUTPUT_DIM,
        embedding_dim: int = EMBEDDING_DIM,
        hidden_dim: int = HIDDEN_DIM,
        hidden_layers: int = HIDDEN_LAYERS,
        grouping: str = "tau",
        no_head: bool = False,
        share_embeddings: bool = False,
        learning_rate: float = HYPERNET_LR,
        betas: Tuple[float, float] = (ADAM_BETA1, ADAM_BETA2),
        eps: float = ADAM_EPS,
        seed: int = 0,
        dtype=np.float64,
    ) -> None:
        if grouping not in GROUPING_MODES:
            raise ValueError(f"grouping must be one of {GROUPING_MODES}, got {grouping!r}")
        if min(output_dim, embedding_dim, hidden_dim, hidden_layers) < 1:
            raise ValueError("hypernetwork dimensions must be positive")
        self.output_dim = output_dim
        self.embedding_dim = embedding_dim
        self.hidden_dim = hidden_dim
        self.hidden_layers = hidden_layers
        self.grouping = grouping
        self.no_head = no_head
        self.share_embeddings = share_embeddings
        self.seed = seed
        self.dtype = np.dtype(dtype)

        self.params: Params = {}
        self.optimizer = AdamState(lr=learning_rate, beta1=betas[0], beta2=betas[1], eps=eps)
        # Global-slot steps keep their own moments; personal steps never see them.
        self.global_optimizer = AdamState(
            lr=learning_rate, beta1=betas[0], beta2=betas[1], eps=eps
        )
        self.groups: Dict[str, HeadGroup] = {}
        self.clients: Dict[int, ClientEntry] = {}
        self.global_slot: Optional[GlobalSlot] = None
        self.frozen: Set[str] = set()
        self.freeze_mode: Optional[str] = None
        self._served: Dict[int, int] = {}
        self._round = 0
        self._lock = threading.RLock()

        widths = [embedding_dim] + [hidden_dim] * hidden_layers
        if no_head:
            widths.append(output_dim)
        for index in range(len(widths) - 1):
            self._init_dense(f"extractor.{index}", widths[index], widths[index + 1])

    # Initialization helpers
    @property
    def extractor_depth(self) -> int:
        return self.hidden_layers + (1 if self.no_head else 0)

    def _uniform(self, name: str, bound: float, shape: Tuple[int, ...]) -> np.ndarray:
        rng = make_rng(self.seed, "hypernet-init", name)
        return rng.uniform(-bound, bound, size=shape).astype(self.dtype)

    def _init_dense(self, prefix: str, n_in: int, n_out: int) -> None:
        bound = 1.0 / np.sqrt(n_in)
        self.params[f"{prefix}.weight"] = self._uniform(f"{prefix}.weight", bound, (n_in, n_out))
        self.params[f"{prefix}.bias"] = self._uniform(f"{prefix}.bias", bound, (n_out,))

    def _init_embedding(self, name: str, tau: int) -> None:
        rng = make_rng(self.seed, "embedding", name)
        scale = np.sqrt(1.0 / self.embedding_dim)
        self.params[name] = rng.normal(0.0, scale, size=(tau, self.embedding_dim)).astype(
            self.dtype
        )

    def _group_key(self, client_id: Optional[int], parameter_count: int) -> str:
        if self.freeze_mode == "new-head":
            prefix = "new-"
        else:
            prefix = ""
        if self.grouping == "tau":
            return f"{prefix}tau{chunk_count(parameter_count, self.output_dim)}"
        if self.grouping == "exact":
            return f"{prefix}k{parameter_count}"
        return f"{prefix}client{client_id}" if client_id is not None else f"{prefix}global"

    def _ensure_group(self, key: str, tau: int) -> HeadGroup:
        group = self.groups.get(key)
        if group is not None:
            if group.tau != tau:
                raise RegistryError(f"head group {key} has {group.tau} channels, need {tau}")
            return group
        group = HeadGroup(key=key, tau=tau)
        if not self.no_head:
            bound = 1.0 / np.sqrt(self.hidden_dim)
            shape = (tau, self.hidden_dim, self.output_dim)
            self.params[f"head.{key}.weight"] = self._uniform(f"head.{key}.weight", bound, shape)
            self.params[f"head.{key}.bias"] = self._uniform(
                f"head.{key}.bias", bound, (tau, self.output_dim)
            )
        if self.share_embeddings:
            group.embedding = f"embedding.group.{key}"
            self._init_embedding(group.embedding, tau)
        self.groups[key] = group
        LOGGER.debug("Created head group %s with %s channels", key, tau)
        return group

    # Registry
    def register_client(
        self, client_id: int, parameter_count: int, num_layers: Optional[int] = None
    ) -> Registration:
        """
        Registers a client by its parameter count alone.

        :param num_layers: Optional weight-layer count, only used to warn when the client's chunk
            count does not exceed it.
        :return: The chunk count, the head group joined and the name of the embedding matrix.
        """
        if parameter_count < 1:
            raise RegistryError(f"client {client_id} reported K={parameter_count}, need K >= 1")
        with self._lock:
            if client_id in self.clients:
                raise RegistryError(f"client {client_id} is already registered")
            tau = chunk_count(parameter_count, self.output_dim)
            key = self._group_key(client_id, parameter_count)
            group = self._ensure_group(key, tau)
            group.members.append(client_id)
            if group.embedding is not None:
                embedding = group.embedding
            else:
                embedding = f"embedding.{client_id}"
                self._init_embedding(embedding, tau)
            self.clients[client_id] = ClientEntry(client_id, parameter_count, tau, key, embedding)

        if num_layers is not None and tau <= num_layers:
            LOGGER.warning(
                "Client %s needs %s chunks for %s weight layers; a smaller output width is recommended.",
                client_id,
                tau,
                num_layers,
            )
        LOGGER.debug("Registered client %s: K=%s tau=%s group=%s", client_id, parameter_count, tau, key)
        return Registration(tau=tau, group_key=key, embedding=embedding)

    def configure_global(self, parameter_count: Optional[int] = None) -> GlobalSlot:
        """
        Sets up the global slot. Without an explicit count the slot takes the smallest registered
        K and that client's head; an explicit count with no matching head gets a dedicated group.
        """
        with self._lock:
            if not self.clients:
                raise RegistryError("the global slot needs at least one registered client")
            smallest = min(
                self.clients.values(),
                key=lambda entry: (entry.parameter_count, entry.client_id),
            )
            if parameter_count is None or parameter_count == smallest.parameter_count:
                parameter_count, key = smallest.parameter_count, smallest.group_key
            else:
                if parameter_count < 1:
                    raise RegistryError(f"global slot needs K >= 1, got {parameter_count}")
                key = self._group_key(None, parameter_count)
            tau = chunk_count(parameter_count, self.output_dim)
            self._ensure_group(key, tau)
            slot = GlobalSlot(parameter_count=parameter_count, tau=tau, group_key=key)
            if slot.embedding not in self.params:
                self._init_embedding(slot.embedding, tau)
            self.global_slot = slot
        LOGGER.debug("Global slot: K_g=%s tau=%s group=%s", parameter_count, tau, key)
        return slot

    # Generation
    def _forward(self, embedding: np.ndarray, group_key: str):
        group = self.groups.get(group_key)
        if group is None:
            raise RegistryError(f"unknown head group {group_key}")
        if embedding.shape != (group.tau, self.embedding_dim):
            raise ShapeError(
                f"embedding shape {embedding.shape} does not match group {group_key} "
                f"({group.tau}, {self.embedding_dim})"
            )
        caches = []
        h = embedding
        depth = self.extractor_depth
        for index in range(depth):
            h, dense_cache = dense_forward(
                h, self.params[f"extractor.{index}.weight"], self.params[f"extractor.{index}.bias"]
            )
            relu_cache = None
            if index < depth - 1:
                h, relu_cache = relu_forward(h)
            caches.append((dense_cache, relu_cache))
        if self.no_head:
            return h, (caches, None)
        weight = self.params[f"head.{group_key}.weight"]
        chunks = np.einsum("th,thn->tn", h, weight) + self.params[f"head.{group_key}.bias"]
        check_finite("generate_params", chunks)
        return chunks, (caches, h)

    def generate_params(self, embedding: np.ndarray, group_key: str, parameter_count: int) -> np.ndarray:
        """
        Concatenates one generated chunk per embedding row and truncates to ``parameter_count``.
        """
        chunks, _ = self._forward(embedding, group_key)
        if parameter_count > chunks.size:
            raise ShapeError(f"{chunks.size} generated values cannot cover K={parameter_count}")
        return chunks.reshape(-1)[:parameter_count].copy()

    def hypernet_backward(
        self, embedding: np.ndarray, group_key: str, upstream: np.ndarray
    ) -> Tuple[Params, np.ndarray]:
        """
        Vector-Jacobian product: gradient of ``<generate_params(embedding), upstream>`` with respect
        to the extractor, the group's head and the embedding rows. Chunk tails past K get zero
        upstream gradient.
        """
        upstream = np.asarray(upstream, dtype=self.dtype)
        chunks, (caches, features) = self._forward(embedding, group_key)
        if upstream.ndim != 1 or upstream.shape[0] > chunks.size:
            raise ShapeError(
                f"upstream of shape {upstream.shape} is longer than the {chunks.size} generated values"
            )
        check_finite("hypernet upstream", upstream)
        padded = np.zeros(chunks.size, dtype=self.dtype)
        padded[: upstream.shape[0]] = upstream
        grad_chunks = padded.reshape(chunks.shape)

        grads: Params = {}
        if self.no_head:
            grad = grad_chunks
        else:
            weight = self.params[f"head.{group_key}.weight"]
            grads[f"head.{group_key}.weight"] = np.einsum("th,tn->thn", features, grad_chunks)
            grads[f"head.{group_key}.bias"] = grad_chunks.copy()
            grad = np.einsum("thn,tn->th", weight, grad_chunks)
        for index in reversed(range(self.extractor_depth)):
            dense_cache, relu_cache = caches[index]
            if relu_cache is not None:
                grad = relu_backward(grad, relu_cache)
            grad, grad_w, grad_b = dense_backward(grad, dense_cache)
            grads[f"extractor.{index}.weight"] = grad_w
            grads[f"extractor.{index}.bias"] = grad_b
        return grads, grad

    def _entry(self, client_id: int) -> ClientEntry:
        entry = self.clients.get(client_id)
        if entry is None:
            raise RegistryError(f"client {client_id} is not registered")
        return entry

    def client_params(self, client_id: int) -> np.ndarray:
        entry = self._entry(client_id)
        return self.generate_params(
            self.params[entry.embedding], entry.group_key, entry.parameter_count
        )

    def generate_global(self) -> np.ndarray:
        if not self.clients:
            raise RegistryError("no clients registered")
        slot = self.global_slot or self.configure_global()
        return self.generate_params(self.params[slot.embedding], slot.group_key, slot.parameter_count)

    # Round protocol
    def begin_round(self, round_index: int) -> None:
        with self._lock:
            self._round = round_index
            self._served.clear()

    def serve(self, client_id: int) -> np.ndarray:
        """
        Generates a client's parameters and records that an update is expected this round.
        """
        params = self.client_params(client_id)
        with self._lock:
            self._served[client_id] = self._round
        return params

    def _step(self, grads: Params, optimizer: Optional[AdamState] = None) -> None:
        trainable = {name: grad for name, grad in grads.items() if name not in self.frozen}
        if trainable:
            self.params.update(adam_step(self.params, trainable, optimizer or self.optimizer))

    def apply_personal_update(self, client_id: int, delta: np.ndarray) -> None:
        """
        Descends on ``u = -delta`` (served minus trained parameters) for the extractor, the
        client's head and the client's embedding rows.
        """
        with self._lock:
            entry = self._entry(client_id)
            if self._served.get(client_id) != self._round:
                raise StaleUpdateError(
                    f"client {client_id} was not served in round {self._round}"
                )
            delta = np.asarray(delta)
            if delta.shape != (entry.parameter_count,):
                raise ShapeError(
                    f"client {client_id} update has shape {delta.shape}, expected ({entry.parameter_count},)"
                )
            grads, grad_v = self.hypernet_backward(
                self.params[entry.embedding], entry.group_key, -delta
            )
            grads[entry.embedding] = grad_v
            self._step(grads)
            del self._served[client_id]

    def apply_global_update(self, updates: Sequence[Tuple[int, np.ndarray, int]]) -> None:
        """
        One step at the global slot from sample-weighted client deltas ``(client_id, delta, m_i)``.
        """
        if not updates:
            raise ValueError("apply_global_update needs at least one delta")
        with self._lock:
            slot = self.global_slot
            if slot is None:
                raise RegistryError("the global slot is not configured")
            total = float(sum(weight for _, _, weight in updates))
            if total <= 0:
                raise ValueError("global update weights must sum to a positive value")
            upstream = np.zeros(slot.parameter_count, dtype=self.dtype)
            for client_id, delta, weight in updates:
                delta = np.asarray(delta, dtype=self.dtype)
                if delta.shape != (slot.parameter_count,):
                    raise ShapeError(
                        f"global update from client {client_id} has shape {delta.shape}, "
                        f"expected ({slot.parameter_count},)"
                    )
                upstream -= (weight / total) * delta
            grads, grad_v = self.hypernet_backward(
                self.params[slot.embedding], slot.group_key, upstream
            )
            grads[slot.embedding] = grad_v
            self._step(grads, self.global_optimizer)

    # Generalization
    def freeze_for_generalization(self, mode: str) -> FreezeHandle:
        """
        ``embeddings-only`` freezes everything that exists now, so only embeddings of clients
        registered afterwards train. ``new-head`` does the same but routes later registrations
        into fresh head groups, which stay trainable.
        """
        if mode not in FREEZE_MODES:
            raise ValueError(f"freeze mode must be one of {FREEZE_MODES}, got {mode!r}")
        if mode == "new-head" and self.no_head:
            raise RegistryError("new-head generalization needs a hypernetwork with heads")
        with self._lock:
            self.frozen = set(self.params)
            self.freeze_mode = mode
            handle = FreezeHandle(mode=mode, frozen=frozenset(self.frozen))
        LOGGER.info("Hypernetwork frozen for generalization (%s), %s tensors fixed", mode, len(self.frozen))
        return handle

    # Introspection and persistence
    def checksum(self, prefixes: Iterable[str] = ("",)) -> str:
        """
        SHA-256 over the bytes of every parameter whose name starts with one of ``prefixes``.
        """
        prefixes = tuple(prefixes)
        digest = hashlib.sha256()
        for name in sorted(self.params):
            if name.startswith(prefixes):
                digest.update(name.encode("utf8"))
                digest.update(np.ascontiguousarray(self.params[name]).tobytes())
        return digest.hexdigest()

    def group_of(self, client_id: int) -> HeadGroup:
        return self.groups[self._entry(client_id).group_key]

    def state_dict(self) -> Dict[str, Any]:
        with self._lock:
            return copy.deepcopy(
                {
                    "params": self.params,
                    "adam": asdict(self.optimizer),
                    "global_adam": asdict(self.global_optimizer),
                    "groups": self.groups,
                    "clients": self.clients,
                    "global_slot": self.global_slot,
                    "frozen": sorted(self.frozen),
                    "freeze_mode": self.freeze_mode,
                    "round": self._round,
                }
            )

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        state = copy.deepcopy(state)
        with self._lock:
            self.params = state["params"]
            self.optimizer = AdamState(**state["adam"])
            self.global_optimizer = AdamState(**state["global_adam"])
            self.groups = state["groups"]
            self.clients = state["clients"]
            self.global_slot = state["global_slot"]
            self.frozen = set(state["frozen"])
            self.freeze_mode = state["freeze_mode"]
            self._round = state["round"]
            self._served.clear()

    def client_ids(self) -> List[int]:
        return sorted(self.clients)
