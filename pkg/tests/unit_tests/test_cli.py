import json

from HyperFedSim import HyperFedSimulator
from HyperFedSim.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from HyperFedSim.config import dump_config
from HyperFedSim.constants import CHECKPOINT_DIR, METRICS_FILE
from HyperFedSim.engine import count_rows
from tests.utilities.builders import tiny_config


def write_config(tmp_path, **overrides):
    config = tiny_config(str(tmp_path / "run"), **overrides)
    path = tmp_path / "config.json"
    dump_config(config, path)
    return path


def test_run(tmp_path, capsys):
    assert main(["run", str(write_config(tmp_path))]) == EXIT_OK
    assert "final mean accuracy: " in capsys.readouterr().out
    assert count_rows(tmp_path / "run" / METRICS_FILE) > 0


def test_seed_override(tmp_path):
    path = write_config(tmp_path)
    main(["run", str(path)])
    first = (tmp_path / "run" / METRICS_FILE).read_text()
    main(["run", str(path), "--seed", "99"])
    assert (tmp_path / "run" / METRICS_FILE).read_text() != first
    assert json.loads((tmp_path / "run" / "resolved_config.json").read_text())["seed"] == 99


def test_dry_run(tmp_path, capsys):
    assert main(["run", str(write_config(tmp_path)), "--dry-run"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "  phase serve" in out
    assert not (tmp_path / "run").exists()


def test_resume(tmp_path, capsys):
    main(["run", str(write_config(tmp_path))])
    rows = count_rows(tmp_path / "run" / METRICS_FILE)
    capsys.readouterr()
    assert main(["resume", str(tmp_path / "run" / CHECKPOINT_DIR)]) == EXIT_OK
    assert "final mean accuracy: n/a" in capsys.readouterr().out
    assert count_rows(tmp_path / "run" / METRICS_FILE) == rows


def test_plot(tmp_path, capsys):
    main(["run", str(write_config(tmp_path))])
    capsys.readouterr()
    assert main(["plot", str(tmp_path / "run" / METRICS_FILE)]) == EXIT_OK
    assert "metrics.plot.json" in capsys.readouterr().out
    assert (tmp_path / "run" / "metrics.plot.json").exists()


def test_config_errors_are_usage_errors(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "dataset": {},\n  "fleet": {"num_clients": 0}\n}')
    assert main(["run", str(path)]) == EXIT_USAGE
    assert "error: line 3: num_clients must be >= 1" in capsys.readouterr().err


def test_missing_checkpoint_is_a_usage_error(tmp_path, capsys):
    assert main(["resume", str(tmp_path / "nowhere")]) == EXIT_USAGE
    assert "no checkpoint found" in capsys.readouterr().err


def test_unexpected_failures(tmp_path, monkeypatch):
    def explode(self):
        raise RuntimeError("boom")

    monkeypatch.setattr(HyperFedSimulator, "run", explode)
    assert main(["run", str(write_config(tmp_path))]) == EXIT_FAILURE
