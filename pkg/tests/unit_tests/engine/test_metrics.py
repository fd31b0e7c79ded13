from HyperFedSim.constants import MEAN_ROW_ID, METRICS_HEADER, PHASE_EVAL, PHASE_EVAL_HELDOUT, PHASE_TRAIN
from HyperFedSim.engine import MetricRow, MetricsSink, RoundMetrics, count_rows, read_rows, truncate_rows


def eval_rows(round_index, accuracies, phase=PHASE_EVAL):
    return [
        MetricRow(round_index, phase, client, accuracy=acc, loss=1.0 - acc)
        for client, acc in enumerate(accuracies)
    ]


def test_row_formatting():
    row = MetricRow(3, PHASE_TRAIN, 2, accuracy=0.5, uplink_bytes=40, downlink_bytes=80)
    assert row.as_csv() == ["3", "train", "2", "0.500000", "", "40", "80"]


def test_round_accuracy_and_mean_row():
    metrics = RoundMetrics(1, eval_rows(1, [0.5, 1.0]))
    metrics.rows.append(MetricRow(1, PHASE_TRAIN, 0, uplink_bytes=10, downlink_bytes=20))
    assert metrics.accuracy() == 0.75
    assert metrics.accuracy(PHASE_TRAIN) is None

    metrics.add_mean_row(PHASE_EVAL)
    mean = metrics.rows[-1]
    assert (mean.client_id, mean.accuracy, mean.loss) == (MEAN_ROW_ID, 0.75, 0.25)
    assert len(metrics.client_rows(PHASE_EVAL)) == 2
    assert metrics.accuracy() == 0.75
    assert (metrics.uplink_bytes, metrics.downlink_bytes) == (10, 20)


def test_headline_falls_back_to_heldout():
    metrics = RoundMetrics(2, eval_rows(2, [0.2, 0.4], phase=PHASE_EVAL_HELDOUT))
    assert metrics.accuracy() == (0.2 + 0.4) / 2
    assert RoundMetrics(2).accuracy() is None


def test_mean_row_needs_evaluated_clients():
    metrics = RoundMetrics(1)
    metrics.add_mean_row(PHASE_EVAL)
    assert not metrics.rows


def test_sink_writes_header_and_rows(tmp_path):
    path = tmp_path / "out" / "metrics.csv"
    sink = MetricsSink(path)
    sink.write(eval_rows(1, [0.5, 0.25]))
    assert sink.rows_written == 2

    rows = read_rows(path)
    assert list(rows[0]) == list(METRICS_HEADER)
    assert [row["accuracy"] for row in rows] == ["0.500000", "0.250000"]
    assert rows[1]["client_id"] == "1"


def test_sink_appends_to_existing_file(tmp_path):
    path = tmp_path / "metrics.csv"
    MetricsSink(path).write(eval_rows(1, [0.5]))
    reopened = MetricsSink(path)
    assert reopened.rows_written == 1
    reopened.write(eval_rows(2, [0.75]))
    assert count_rows(path) == 2
    assert path.read_text().count("round") == 1


def test_truncate_rows(tmp_path):
    path = tmp_path / "metrics.csv"
    sink = MetricsSink(path)
    for round_index in range(1, 4):
        sink.write(eval_rows(round_index, [0.1, 0.2]))
    truncate_rows(path, 2)
    assert count_rows(path) == 2
    assert {row["round"] for row in read_rows(path)} == {"1"}
    truncate_rows(path, 0)
    assert count_rows(path) == 0
    assert read_rows(path) == []
