from concurrent.futures import ThreadPoolExecutor

import numpy as np
from pytest import mark, param

from HyperFedSim.config import config_from_dict
from HyperFedSim.constants import INDEX_BYTES, PHASE_EVAL, PHASE_GLOBAL, PHASE_TRAIN, VALUE_BYTES
from HyperFedSim.engine.pruning import kept_count
from HyperFedSim.models import DistillationObjective, flat_param_count
from HyperFedSim.runners import MHPFedHNGDRunner, MHPFedHNGRunner, build_fleet, make_runner
from tests.utilities.builders import image_blobs, tiny_config
from tests.utilities.testing_constants import NUM_CLIENTS

HETEROGENEOUS = ["tiny-lenet", "mlp", "tiny-vgg8", "tiny-resnet10", "tiny-mlp"]


def gd_config(directory, **rounds):
    return tiny_config(directory, rounds={"algorithm": "mh-pfedhngd", "lam": 0.5, "temperature": 2.0, **rounds})


def run(config, fleet=None, executor=None):
    runner = make_runner(config, fleet=fleet, executor=executor)
    runner.setup()
    return runner, list(runner.rounds())


def all_rows(metrics):
    return [row for round_metrics in metrics for row in round_metrics.rows]


def client_checksum(runner):
    return runner.hypernet.checksum(
        ["extractor.", "head."] + [f"embedding.{cid}" for cid in runner.active]
    )


def test_setup_configures_the_global_slot(tmp_path):
    runner = make_runner(gd_config(str(tmp_path)))
    runner.setup()
    assert isinstance(runner, MHPFedHNGDRunner)
    slot = runner.hypernet.global_slot
    assert slot.parameter_count == flat_param_count(runner.global_arch)
    assert runner.deployed == frozenset(range(NUM_CLIENTS))
    assert "embedding.global" in runner.hypernet.params


def test_global_architecture_defaults_to_the_smallest_client(tmp_path):
    config = tiny_config(
        str(tmp_path),
        rounds={"algorithm": "mh-pfedhngd"},
        fleet={"num_clients": 5, "architectures": HETEROGENEOUS},
    )
    runner = make_runner(config, fleet=build_fleet(config, dataset=image_blobs()))
    runner.setup()
    smallest = min(runner.active, key=lambda cid: runner.client(cid).parameter_count)
    assert runner.global_arch == runner.client(smallest).arch
    assert runner.global_arch.name == "tiny-lenet"


def test_explicit_global_architecture(tmp_path):
    config = tiny_config(
        str(tmp_path), rounds={"algorithm": "mh-pfedhngd"}, fleet={"global_architecture": "mlp"}
    )
    runner = make_runner(config)
    runner.setup()
    assert runner.global_arch.name == "mlp"
    assert runner.hypernet.global_slot.parameter_count == flat_param_count(runner.global_arch)


@mark.parametrize(
    "ratio,count",
    (
        param(0.0, 0, id="none"),
        param(0.5, 2, id="half"),
        param(0.3, 2, id="ceiling"),
        param(1.0, NUM_CLIENTS, id="all"),
    ),
)
def test_deployment_ratio(tmp_path, ratio, count):
    runner = make_runner(gd_config(str(tmp_path), deployment_ratio=ratio))
    runner.setup()
    assert len(runner.deployed) == count
    again = make_runner(gd_config(str(tmp_path), deployment_ratio=ratio))
    assert again.select_deployed() == runner.deployed


def test_round_has_both_phases(tmp_path):
    runner, metrics = run(gd_config(str(tmp_path)))
    first = metrics[0]
    assert [row.client_id for row in first.client_rows(PHASE_GLOBAL)] == list(range(NUM_CLIENTS))
    assert [row.client_id for row in first.client_rows(PHASE_TRAIN)] == list(range(NUM_CLIENTS))
    phases = [row.phase for row in first.rows]
    assert phases.index(PHASE_GLOBAL) < phases.index(PHASE_TRAIN) < phases.index(PHASE_EVAL)
    assert set(first.timings) >= {"generate-global", "global-train", "global-update", "serve", "train", "update"}


def test_global_rows_account_bytes(tmp_path):
    runner, metrics = run(gd_config(str(tmp_path)))
    k_global = runner.hypernet.global_slot.parameter_count
    for row in metrics[0].client_rows(PHASE_GLOBAL):
        assert row.downlink_bytes == k_global * VALUE_BYTES
        assert row.uplink_bytes == k_global * VALUE_BYTES


def test_pruning_sparsifies_personal_deltas_only(tmp_path):
    runner, metrics = run(gd_config(str(tmp_path), prune_fraction=0.3))
    k_global = runner.hypernet.global_slot.parameter_count
    for round_metrics in metrics:
        for row in round_metrics.client_rows(PHASE_GLOBAL):
            assert row.uplink_bytes == k_global * VALUE_BYTES
        for row in round_metrics.client_rows(PHASE_TRAIN):
            kept = kept_count(0.3, runner.client(row.client_id).parameter_count)
            assert row.uplink_bytes == kept * (VALUE_BYTES + INDEX_BYTES)


def test_full_lambda_matches_the_undistilled_variant(tmp_path):
    gd_runner, gd = run(gd_config(str(tmp_path), lam=1.0))
    g_runner, g = run(tiny_config(str(tmp_path), rounds={"algorithm": "mh-pfedhng"}))
    assert isinstance(g_runner, MHPFedHNGRunner)
    assert all_rows(gd) == all_rows(g)
    assert gd_runner.hypernet.checksum() == g_runner.hypernet.checksum()


def test_distillation_changes_personalized_training(tmp_path):
    _, distilled = run(gd_config(str(tmp_path), lam=0.5))
    _, plain = run(gd_config(str(tmp_path), lam=1.0))
    train_losses = [
        [row.loss for row in m.client_rows(PHASE_TRAIN)] for m in (distilled[0], plain[0])
    ]
    assert train_losses[0] != train_losses[1]


def test_zero_deployment_matches_the_personalized_runner(tmp_path):
    gd_runner, gd = run(gd_config(str(tmp_path), deployment_ratio=0.0))
    pfedhn_runner, pfedhn = run(tiny_config(str(tmp_path)))
    assert all_rows(gd) == all_rows(pfedhn)
    assert client_checksum(gd_runner) == client_checksum(pfedhn_runner)


def test_zero_local_epochs_leave_the_hypernetwork_unchanged(tmp_path):
    runner = make_runner(gd_config(str(tmp_path), local_epochs=0))
    runner.setup()
    before = runner.hypernet.checksum()
    for _ in runner.rounds():
        pass
    assert runner.hypernet.checksum() == before


def test_teacher_is_the_round_start_global_model(tmp_path, monkeypatch):
    runner = make_runner(gd_config(str(tmp_path), rounds=1))
    runner.setup()
    start = runner.hypernet.generate_global()
    seen = []
    original = runner.objective_for

    def spy(client_id, round_index):
        objective = original(client_id, round_index)
        seen.append(objective)
        return objective

    monkeypatch.setattr(runner, "objective_for", spy)
    list(runner.rounds())
    assert len(seen) == NUM_CLIENTS
    assert all(isinstance(objective, DistillationObjective) for objective in seen)
    assert np.array_equal(seen[0].teacher.flat().values, start)
    assert runner._teacher is None


def test_teacher_downlink_for_clients_outside_the_global_phase(tmp_path):
    config = gd_config(str(tmp_path), independent_phase_sampling=True, participation=0.5)
    runner, metrics = run(config)
    k_global = runner.hypernet.global_slot.parameter_count
    for round_metrics in metrics:
        global_ids = {row.client_id for row in round_metrics.client_rows(PHASE_GLOBAL)}
        for row in round_metrics.client_rows(PHASE_TRAIN):
            k = runner.client(row.client_id).parameter_count
            extra = 0 if row.client_id in global_ids else k_global * VALUE_BYTES
            assert row.downlink_bytes == k * VALUE_BYTES + extra


def test_independent_sampling_uses_its_own_stream(tmp_path):
    runner = make_runner(gd_config(str(tmp_path), independent_phase_sampling=True, participation=0.5))
    draws = [
        (runner.sample(r), runner.sample(r, stream="global-participants")) for r in range(1, 11)
    ]
    assert any(personal != global_ for personal, global_ in draws)


def test_executor_matches_sequential_run(tmp_path):
    config = gd_config(str(tmp_path))
    sequential_runner, sequential = run(config)
    with ThreadPoolExecutor(max_workers=4) as executor:
        pooled_runner, pooled = run(config, executor=executor)
    assert all_rows(pooled) == all_rows(sequential)
    assert pooled_runner.hypernet.checksum() == sequential_runner.hypernet.checksum()


def test_describe_mentions_distillation(tmp_path):
    runner = make_runner(gd_config(str(tmp_path)))
    runner.setup()
    assert any("lambda 0.5, temperature 2.0" in line for line in runner.describe())


def test_heterogeneous_fleet_smoke(tmp_path):
    config = tiny_config(
        str(tmp_path),
        rounds={"algorithm": "mh-pfedhngd", "rounds": 2},
        fleet={"num_clients": 5, "architectures": HETEROGENEOUS},
    )
    runner, metrics = run(config, fleet=build_fleet(config, dataset=image_blobs()))
    counts = {runner.client(cid).parameter_count for cid in runner.active}
    assert len(counts) == 5
    assert len(metrics) == 2
    for row in all_rows(metrics):
        assert row.loss is None or np.isfinite(row.loss)
    assert 0.0 <= metrics[-1].accuracy() <= 1.0


@mark.slow
def test_heterogeneous_fleet_long_run(tmp_path):
    config = tiny_config(
        str(tmp_path),
        rounds={"algorithm": "mh-pfedhngd", "rounds": 20},
        fleet={"num_clients": 5, "architectures": HETEROGENEOUS},
    )
    _, metrics = run(config, fleet=build_fleet(config, dataset=image_blobs()))
    assert all(np.isfinite(row.loss) for row in all_rows(metrics) if row.loss is not None)


DESK_ALGORITHMS = ("mh-pfedhn", "mh-pfedhng", "mh-pfedhngd", "fedavg", "local")
DESK_SEEDS = (0, 1, 2)
TAIL = 10


def desk_accuracy(directory, algorithm, seed):
    config = config_from_dict(
        {
            "preset": "desk-blobs",
            "seed": seed,
            "rounds": {"algorithm": algorithm},
            "output": {"directory": str(directory / f"{algorithm}-{seed}")},
        }
    )
    _, metrics = run(config)
    return float(np.mean([round_metrics.accuracy() for round_metrics in metrics[-TAIL:]]))


@mark.slow
def test_desk_scale_ordering(tmp_path):
    ordered = 0
    for seed in DESK_SEEDS:
        acc = {algorithm: desk_accuracy(tmp_path, algorithm, seed) for algorithm in DESK_ALGORITHMS}
        hn, g, gd = acc["mh-pfedhn"], acc["mh-pfedhng"], acc["mh-pfedhngd"]
        assert hn >= acc["local"], (seed, acc)
        assert hn >= acc["fedavg"] + 0.10, (seed, acc)
        assert gd >= hn - 0.01, (seed, acc)
        assert gd >= g - 0.01, (seed, acc)
        ordered += gd >= g >= hn
    assert ordered >= 2
