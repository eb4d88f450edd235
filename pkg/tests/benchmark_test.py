import argparse
import csv
import json
import os

import numpy as np
import pytest

from scripts.make_synthetic_sources import synthetic_image
from src import main
from src.inputs import save_image
from src.run.directions import DIRECTION_COLUMNS

COMMANDS = ("attack", "sweep", "ablate-k", "defense")


@pytest.mark.slow
def benchmark_directions_test(tmp_path):
    """
    Trains a small codec, runs every benchmark command on it and checks that each direction gets a verdict.
    """
    sources = tmp_path / "sources"
    sources.mkdir()
    rng = np.random.default_rng(0)
    for idx in range(6):
        save_image(synthetic_image(64, 96, rng), str(sources / f"synth{idx}.ppm"))
    config = {"codec": {"latent_channels": 8, "hidden_channels": 16, "epochs": 20, "print_every": 0},
              "data": {"source_dir": str(sources), "crop": 32, "pairs": 2, "train_crops": 32, "heldout_crops": 4},
              "attack": {"steps": 60, "seeds": [0, 1], "baseline_alphas": [0.01, 0.001],
                         "sweep_epsilons": [0.06, 0.1], "sweep_steps": [30, 60], "ablation_grid": [0.33, 0.5, 1.]},
              "output": {"save_images": False, "emit_plots": False}}
    weights = str(tmp_path / "codec.weights")
    runs = []
    for command in ("train",) + COMMANDS:
        directory = str(tmp_path / command)
        path = str(tmp_path / f"{command}.json")
        with open(path, 'w') as f:
            json.dump({**config, "output": {**config["output"], "directory": directory}}, f)
        args = argparse.Namespace(run_mode=command, config=path, weights=weights, grid=None)
        assert main.main(args) == 0
        if command != "train":
            runs.append(directory)

    out = str(tmp_path / "directions.csv")
    assert main.main(argparse.Namespace(run_mode="directions", runs=runs, out=out, success_threshold_psnr=22.)) == 0
    with open(out, newline='') as f:
        reader = csv.DictReader(f)
        assert tuple(reader.fieldnames) == DIRECTION_COLUMNS
        verdicts = list(reader)
    assert len(verdicts) == 9
    assert all(row["verdict"] in ("holds", "fails", "skipped") for row in verdicts)
    checked = {row["direction"] for row in verdicts if row["verdict"] != "skipped"}
    assert {"superiority", "budget_monotonicity", "jpeg_drops_naive_attack", "bypass_recovers",
            "ablation_interior_maximum"} <= checked
