import numpy as np
import pytest

from HyperFedSim.exceptions import ShapeError
from HyperFedSim.models import build_model, flat_param_count, mlp, pack, unpack, with_flags


def small_mlp():
    return mlp(num_classes=2, input_dim=3, hidden=(2,), name="small")


def test_pack_order_is_layer_then_weight_then_bias():
    arch = small_mlp()
    weights = {
        "fc1.weight": np.arange(6.0).reshape(3, 2),
        "fc1.bias": np.array([10.0, 11.0]),
        "fc2.weight": np.array([[20.0, 21.0], [22.0, 23.0]]),
        "fc2.bias": np.array([30.0, 31.0]),
    }
    flat = pack(weights, arch)
    assert flat.arch_name == "small"
    assert len(flat) == flat_param_count(arch) == 14
    assert flat.values.tolist() == [0, 1, 2, 3, 4, 5, 10, 11, 20, 21, 22, 23, 30, 31]


def test_pack_skips_local_layers():
    arch = with_flags(small_mlp(), local=["fc2"])
    model = build_model(arch)
    flat = model.flat()
    assert len(flat) == 8
    assert np.array_equal(flat.values[:6], model.params["fc1.weight"].reshape(-1))


def test_unpack_inverts_pack():
    model = build_model(small_mlp(), np.random.default_rng(3))
    restored = unpack(model.flat(), model.arch)
    for name, tensor in restored.items():
        assert np.array_equal(tensor, model.params[name])


def test_unpack_returns_copies():
    arch = small_mlp()
    values = np.zeros(14)
    weights = unpack(values, arch)
    weights["fc1.weight"][0, 0] = 5.0
    assert values[0] == 0.0


def test_pack_and_unpack_check_shapes():
    arch = small_mlp()
    with pytest.raises(ShapeError):
        unpack(np.zeros(13), arch)
    with pytest.raises(ShapeError):
        unpack(np.zeros((14, 1)), arch)
    with pytest.raises(ShapeError):
        pack({"fc1.weight": np.zeros((3, 2))}, arch)
    with pytest.raises(ShapeError):
        pack(
            {
                "fc1.weight": np.zeros((2, 3)),
                "fc1.bias": np.zeros(2),
                "fc2.weight": np.zeros((2, 2)),
                "fc2.bias": np.zeros(2),
            },
            arch,
        )


def test_pack_casts_dtype():
    model = build_model(small_mlp())
    assert model.flat().values.dtype == np.float64
    assert pack(model.params, model.arch, dtype=np.float32).values.dtype == np.float32


def test_load_flat_leaves_local_tensors_alone():
    arch = with_flags(small_mlp(), local=["fc2"])
    model = build_model(arch, np.random.default_rng(5))
    local_before = model.params["fc2.weight"].copy()
    model.load_flat(np.ones(8))
    assert np.all(model.params["fc1.weight"] == 1.0)
    assert np.array_equal(model.params["fc2.weight"], local_before)
