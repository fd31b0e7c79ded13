import logging

import numpy as np
import pytest
from pytest import mark, param

from HyperFedSim.exceptions import RegistryError, ShapeError, StaleUpdateError
from HyperFedSim.hypernet import Hypernetwork
from HyperFedSim.kernel import numerical_gradient, relative_error
from tests.utilities.builders import tiny_hypernet
from tests.utilities.testing_constants import GRADIENT_TOLERANCE, VJP_FIXTURES


def update(hypernet, client_id, delta, round_index=1):
    hypernet.begin_round(round_index)
    hypernet.serve(client_id)
    hypernet.apply_personal_update(client_id, delta)


@mark.parametrize(
    "parameter_count,tau",
    (
        param(1, 1, id="single-value"),
        param(4, 1, id="exactly-one-chunk"),
        param(5, 2, id="one-over"),
        param(12, 3, id="three-chunks"),
    ),
)
def test_chunk_count_and_length(parameter_count, tau):
    hypernet = tiny_hypernet(output_dim=4)
    registration = hypernet.register_client(0, parameter_count)
    assert registration.tau == tau
    assert registration.group_key == f"tau{tau}"
    assert hypernet.params[registration.embedding].shape == (tau, 3)
    assert hypernet.client_params(0).shape == (parameter_count,)


def test_clients_with_equal_chunk_counts_share_a_head():
    hypernet = tiny_hypernet(output_dim=4)
    hypernet.register_client(0, 5)
    hypernet.register_client(1, 8)
    hypernet.register_client(2, 9)
    assert hypernet.group_of(0) is hypernet.group_of(1)
    assert hypernet.group_of(0).members == [0, 1]
    assert hypernet.group_of(2).key == "tau3"
    assert hypernet.client_params(0).shape == (5,)


def test_shorter_client_sees_a_prefix_of_the_chunks():
    hypernet = tiny_hypernet(output_dim=4, share_embeddings=True)
    hypernet.register_client(0, 5)
    hypernet.register_client(1, 8)
    assert np.array_equal(hypernet.client_params(1)[:5], hypernet.client_params(0))


@mark.parametrize(
    "grouping,keys",
    (
        param("exact", ["k5", "k8"], id="exact"),
        param("client", ["client0", "client1"], id="client"),
    ),
)
def test_alternative_groupings(grouping, keys):
    hypernet = tiny_hypernet(output_dim=4, grouping=grouping)
    hypernet.register_client(0, 5)
    hypernet.register_client(1, 8)
    assert [hypernet.group_of(0).key, hypernet.group_of(1).key] == keys


def test_no_head_extractor_emits_chunks():
    hypernet = tiny_hypernet(output_dim=4, no_head=True)
    hypernet.register_client(0, 7)
    assert not any(name.startswith("head.") for name in hypernet.params)
    assert hypernet.params["extractor.2.weight"].shape == (4, 4)
    assert hypernet.client_params(0).shape == (7,)


def test_initialization_is_seeded():
    first, second = tiny_hypernet(seed=3), tiny_hypernet(seed=3)
    for hypernet in (first, second):
        hypernet.register_client(0, 6)
    assert first.checksum() == second.checksum()
    other = tiny_hypernet(seed=4)
    other.register_client(0, 6)
    assert other.checksum() != first.checksum()


def test_zero_parameters_generate_zeros():
    hypernet = tiny_hypernet()
    hypernet.register_client(0, 10)
    for name in hypernet.params:
        hypernet.params[name][...] = 0.0
    assert not hypernet.client_params(0).any()


@mark.parametrize("seed", range(VJP_FIXTURES))
def test_vector_jacobian_product(seed):
    rng = np.random.default_rng(seed)
    output_dim, tau = int(rng.integers(1, 9)), int(rng.integers(1, 4))
    hypernet = tiny_hypernet(
        output_dim=output_dim,
        embedding_dim=int(rng.integers(1, 5)),
        hidden_dim=int(rng.integers(1, 5)),
        hidden_layers=int(rng.integers(1, 4)),
        seed=seed,
        no_head=bool(seed % 5 == 0),
    )
    parameter_count = int(rng.integers((tau - 1) * output_dim + 1, tau * output_dim + 1))
    registration = hypernet.register_client(0, parameter_count)
    embedding = hypernet.params[registration.embedding]
    upstream = rng.normal(size=parameter_count)

    def inner_product():
        return float(
            hypernet.generate_params(embedding, registration.group_key, parameter_count) @ upstream
        )

    grads, grad_v = hypernet.hypernet_backward(embedding, registration.group_key, upstream)
    grads[registration.embedding] = grad_v
    names = sorted(grads)
    assert set(names) == set(hypernet.params)
    analytic = np.concatenate([grads[name].reshape(-1) for name in names])
    numeric = np.concatenate(
        [numerical_gradient(inner_product, hypernet.params[name]).reshape(-1) for name in names]
    )
    assert relative_error(analytic, numeric) <= GRADIENT_TOLERANCE


def test_backward_rejects_long_upstream():
    hypernet = tiny_hypernet(output_dim=4)
    registration = hypernet.register_client(0, 5)
    embedding = hypernet.params[registration.embedding]
    with pytest.raises(ShapeError):
        hypernet.hypernet_backward(embedding, registration.group_key, np.zeros(9))
    with pytest.raises(ShapeError):
        hypernet.generate_params(np.zeros((3, 3)), registration.group_key, 5)


def test_zero_delta_leaves_state_unchanged():
    hypernet = tiny_hypernet()
    hypernet.register_client(0, 10)
    before = hypernet.checksum()
    update(hypernet, 0, np.zeros(10))
    assert hypernet.checksum() == before


def test_update_only_touches_own_embedding_and_head(rng):
    hypernet = tiny_hypernet(output_dim=4)
    hypernet.register_client(0, 5)
    hypernet.register_client(1, 6)
    hypernet.register_client(2, 12)
    embedding_b = hypernet.checksum(["embedding.1"])
    other_head = hypernet.checksum(["head.tau3."])
    shared = hypernet.checksum(["extractor.", "head.tau2."])
    update(hypernet, 0, rng.normal(size=5))
    assert hypernet.checksum(["embedding.1"]) == embedding_b
    assert hypernet.checksum(["head.tau3."]) == other_head
    assert hypernet.checksum(["extractor.", "head.tau2."]) != shared


def test_personal_update_descends_towards_trained_parameters():
    hypernet = tiny_hypernet(output_dim=4, learning_rate=1e-3)
    hypernet.register_client(0, 8)
    target = hypernet.client_params(0) + 1.0
    distance = np.linalg.norm(target - hypernet.client_params(0))
    for round_index in range(1, 21):
        hypernet.begin_round(round_index)
        served = hypernet.serve(0)
        hypernet.apply_personal_update(0, target - served)
    assert np.linalg.norm(target - hypernet.client_params(0)) < distance


def test_update_requires_a_serve_in_the_current_round():
    hypernet = tiny_hypernet()
    hypernet.register_client(0, 6)
    hypernet.begin_round(1)
    with pytest.raises(StaleUpdateError):
        hypernet.apply_personal_update(0, np.zeros(6))
    hypernet.serve(0)
    hypernet.begin_round(2)
    with pytest.raises(StaleUpdateError):
        hypernet.apply_personal_update(0, np.zeros(6))
    hypernet.serve(0)
    hypernet.apply_personal_update(0, np.zeros(6))
    with pytest.raises(StaleUpdateError):
        hypernet.apply_personal_update(0, np.zeros(6))


def test_stale_update_is_a_registry_error():
    assert issubclass(StaleUpdateError, RegistryError)
    assert issubclass(RegistryError, KeyError)


def test_update_shape_is_checked():
    hypernet = tiny_hypernet()
    hypernet.register_client(0, 6)
    hypernet.begin_round(1)
    hypernet.serve(0)
    with pytest.raises(ShapeError):
        hypernet.apply_personal_update(0, np.zeros(5))


def test_registry_errors():
    hypernet = tiny_hypernet()
    with pytest.raises(RegistryError):
        hypernet.configure_global()
    with pytest.raises(RegistryError):
        hypernet.generate_global()
    hypernet.register_client(0, 6)
    with pytest.raises(RegistryError):
        hypernet.register_client(0, 6)
    with pytest.raises(RegistryError):
        hypernet.register_client(1, 0)
    with pytest.raises(RegistryError):
        hypernet.client_params(7)
    with pytest.raises(RegistryError):
        hypernet.apply_global_update([(0, np.zeros(6), 1)])


def test_constructor_errors():
    with pytest.raises(ValueError):
        Hypernetwork(grouping="layer")
    with pytest.raises(ValueError):
        Hypernetwork(output_dim=0)


def test_few_chunks_warning(caplog):
    hypernet = tiny_hypernet(output_dim=4)
    with caplog.at_level(logging.WARNING, logger="HyperFedSim"):
        hypernet.register_client(0, 8, num_layers=3)
    assert "smaller output width" in caplog.text
    caplog.clear()
    with caplog.at_level(logging.WARNING, logger="HyperFedSim"):
        hypernet.register_client(1, 16, num_layers=3)
    assert not caplog.text


def test_global_slot_takes_smallest_client():
    hypernet = tiny_hypernet(output_dim=4)
    hypernet.register_client(0, 9)
    hypernet.register_client(1, 5)
    slot = hypernet.configure_global()
    assert (slot.parameter_count, slot.tau, slot.group_key) == (5, 2, "tau2")
    assert hypernet.generate_global().shape == (5,)
    assert slot.embedding in hypernet.params


def test_global_slot_with_explicit_count():
    hypernet = tiny_hypernet(output_dim=4)
    hypernet.register_client(0, 5)
    slot = hypernet.configure_global(14)
    assert (slot.tau, slot.group_key) == (4, "tau4")
    assert "head.tau4.weight" in hypernet.params
    assert hypernet.generate_global().shape == (14,)


def test_global_update_is_the_weighted_average_of_deltas(rng):
    first, second = tiny_hypernet(output_dim=4), tiny_hypernet(output_dim=4)
    for hypernet in (first, second):
        hypernet.register_client(0, 5)
        hypernet.register_client(1, 6)
        hypernet.configure_global()
    delta_a, delta_b = rng.normal(size=5), rng.normal(size=5)
    first.apply_global_update([(0, delta_a, 1), (1, delta_b, 3)])
    second.apply_global_update([(0, (delta_a + 3 * delta_b) / 4, 1)])
    for name in first.params:
        assert np.allclose(first.params[name], second.params[name], atol=1e-12), name


def test_global_update_leaves_client_embeddings_alone(rng):
    hypernet = tiny_hypernet(output_dim=4)
    hypernet.register_client(0, 5)
    hypernet.configure_global()
    embeddings = hypernet.checksum(["embedding.0"])
    global_embedding = hypernet.checksum(["embedding.global"])
    hypernet.apply_global_update([(0, rng.normal(size=5), 2)])
    assert hypernet.checksum(["embedding.0"]) == embeddings
    assert hypernet.checksum(["embedding.global"]) != global_embedding


def test_global_update_keeps_its_own_adam_moments(rng):
    hypernet = tiny_hypernet(output_dim=4)
    hypernet.register_client(0, 5)
    hypernet.configure_global()
    update(hypernet, 0, rng.normal(size=5))
    steps = dict(hypernet.optimizer.t)
    moments = {name: value.copy() for name, value in hypernet.optimizer.u.items()}

    hypernet.apply_global_update([(0, 100.0 * rng.normal(size=5), 1)])
    assert hypernet.optimizer.t == steps
    for name, value in moments.items():
        assert np.array_equal(hypernet.optimizer.u[name], value), name
    assert hypernet.global_optimizer.t["embedding.global"] == 1
    assert "embedding.0" not in hypernet.global_optimizer.t
    shared = [name for name in hypernet.global_optimizer.t if name.startswith("extractor.")]
    assert shared and all(hypernet.global_optimizer.t[name] == steps[name] == 1 for name in shared)

    restored = tiny_hypernet(output_dim=4)
    restored.load_state_dict(hypernet.state_dict())
    assert restored.global_optimizer.t == hypernet.global_optimizer.t
    assert restored.optimizer.t == hypernet.optimizer.t


def test_global_update_errors():
    hypernet = tiny_hypernet(output_dim=4)
    hypernet.register_client(0, 5)
    hypernet.configure_global()
    with pytest.raises(ValueError):
        hypernet.apply_global_update([])
    with pytest.raises(ValueError):
        hypernet.apply_global_update([(0, np.zeros(5), 0)])
    with pytest.raises(ShapeError):
        hypernet.apply_global_update([(0, np.zeros(6), 1)])


def test_embeddings_only_generalization(rng):
    hypernet = tiny_hypernet(output_dim=4)
    hypernet.register_client(0, 5)
    handle = hypernet.freeze_for_generalization("embeddings-only")
    assert handle.mode == "embeddings-only" and "embedding.0" in handle.frozen
    registration = hypernet.register_client(1, 6)
    assert registration.group_key == "tau2"
    fixed = hypernet.checksum(["extractor.", "head.", "embedding.0"])
    novel = hypernet.checksum(["embedding.1"])
    update(hypernet, 1, rng.normal(size=6))
    assert hypernet.checksum(["extractor.", "head.", "embedding.0"]) == fixed
    assert hypernet.checksum(["embedding.1"]) != novel


def test_new_head_generalization(rng):
    hypernet = tiny_hypernet(output_dim=4)
    hypernet.register_client(0, 5)
    hypernet.freeze_for_generalization("new-head")
    registration = hypernet.register_client(1, 6)
    assert registration.group_key == "new-tau2"
    fixed = hypernet.checksum(["extractor.", "head.tau2.", "embedding.0"])
    fresh = hypernet.checksum(["head.new-tau2.", "embedding.1"])
    update(hypernet, 1, rng.normal(size=6))
    assert hypernet.checksum(["extractor.", "head.tau2.", "embedding.0"]) == fixed
    assert hypernet.checksum(["head.new-tau2."]) != fresh
    assert hypernet.checksum(["head.new-tau2.", "embedding.1"]) != fresh


def test_freeze_errors():
    with pytest.raises(ValueError):
        tiny_hypernet().freeze_for_generalization("everything")
    with pytest.raises(RegistryError):
        tiny_hypernet(no_head=True).freeze_for_generalization("new-head")


def test_state_round_trip(rng):
    hypernet = tiny_hypernet(output_dim=4)
    hypernet.register_client(0, 5)
    hypernet.register_client(1, 9)
    hypernet.configure_global()
    update(hypernet, 0, rng.normal(size=5))

    restored = tiny_hypernet(output_dim=4)
    restored.load_state_dict(hypernet.state_dict())
    assert restored.checksum() == hypernet.checksum()
    assert restored.client_ids() == [0, 1]
    assert restored.global_slot == hypernet.global_slot

    delta = rng.normal(size=9)
    update(hypernet, 1, delta, round_index=2)
    update(restored, 1, delta, round_index=2)
    assert restored.checksum() == hypernet.checksum()


def test_state_dict_is_a_copy():
    hypernet = tiny_hypernet()
    hypernet.register_client(0, 5)
    state = hypernet.state_dict()
    state["params"]["embedding.0"][...] = 9.0
    assert not np.any(hypernet.params["embedding.0"] == 9.0)


def test_checksum_prefixes():
    hypernet = tiny_hypernet()
    hypernet.register_client(0, 5)
    assert hypernet.checksum() == hypernet.checksum([""])
    assert hypernet.checksum(["extractor."]) != hypernet.checksum(["embedding."])
    assert len(hypernet.checksum()) == 64
