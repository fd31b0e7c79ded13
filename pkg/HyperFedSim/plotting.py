"""
Line-chart descriptions built from a metrics CSV, plus a PNG when matplotlib is installed.
"""
import json
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from HyperFedSim.constants import MEAN_ROW_ID, PHASE_EVAL, PHASE_EVAL_HELDOUT, PHASE_EVAL_TRAIN
from HyperFedSim.engine import read_rows
from HyperFedSim.utils import LOGGER

PLOTTED_PHASES = (PHASE_EVAL, PHASE_EVAL_TRAIN, PHASE_EVAL_HELDOUT)


def accuracy_series(csv_path: Union[str, Path]) -> Dict[str, List[Tuple[int, float]]]:
    """
    Mean evaluation accuracy per round, one series per evaluation phase present in the CSV.
    """
    series: Dict[str, List[Tuple[int, float]]] = defaultdict(list)
    for row in read_rows(csv_path):
        if row["client_id"] != MEAN_ROW_ID or row["phase"] not in PLOTTED_PHASES:
            continue
        series[row["phase"]].append((int(row["round"]), float(row["accuracy"])))
    return {phase: sorted(points) for phase, points in series.items()}


def chart_description(csv_path: Union[str, Path]) -> Dict[str, Any]:
    return {
        "source": str(csv_path),
        "x": "round",
        "y": "mean accuracy",
        "series": [
            {"phase": phase, "rounds": [r for r, _ in points], "accuracy": [a for _, a in points]}
            for phase, points in sorted(accuracy_series(csv_path).items())
        ],
    }


def write_plot(
    csv_path: Union[str, Path], output: Optional[Union[str, Path]] = None
) -> Tuple[Path, Optional[Path]]:
    """
    Writes ``<csv-stem>.plot.json`` next to the CSV (or at ``output``) and a matching PNG when a
    plotting backend is available.

    :return: Path of the description file and of the image, or None for the image.
    """
    csv_path = Path(csv_path)
    description_path = Path(output) if output else csv_path.with_name(f"{csv_path.stem}.plot.json")
    description = chart_description(csv_path)
    with open(description_path, "w", encoding="utf8") as description_file:
        json.dump(description, description_file, indent=2)
        description_file.write("\n")

    try:
        import matplotlib  # pylint: disable=import-outside-toplevel

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt  # pylint: disable=import-outside-toplevel
    except ImportError:
        LOGGER.warning("matplotlib is not installed, only %s was written.", description_path)
        return description_path, None

    image_path = description_path.with_suffix("").with_suffix(".png")
    figure, axes = plt.subplots()
    for entry in description["series"]:
        axes.plot(entry["rounds"], entry["accuracy"], label=entry["phase"])
    axes.set_xlabel("Round")
    axes.set_ylabel("Mean accuracy")
    axes.grid(True, alpha=0.3)
    if description["series"]:
        axes.legend()
    figure.savefig(image_path)
    plt.close(figure)
    return description_path, image_path
