"""
Renders result CSVs as standalone SVG figures. Output bytes only depend on the CSV contents.
"""
import csv
import math
import typing

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SCHEMAS = {"lcs_trajectory": ("t", "lcs"),
           "sweep_heatmap": ("epsilon", "steps", "mean_psnr"),
           "ablation_curve": ("k", "mean_psnr")}


class SchemaError(ValueError):
    pass


def read_columns(csv_path: str, kind: str) -> typing.Dict[str, np.ndarray]:
    if kind not in SCHEMAS:
        raise ValueError(f"Unknown plot kind {kind!r}, use one of {list(SCHEMAS)}")
    with open(csv_path, newline='') as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        missing = [column for column in SCHEMAS[kind] if column not in header]
        if missing:
            raise SchemaError(f"{csv_path} does not match the {kind} schema, missing columns: {', '.join(missing)}")
        rows = list(reader)
    return {column: np.array([float(row[column]) if row[column] else math.nan for row in rows], dtype=np.float64)
            for column in SCHEMAS[kind]}


def _lcs_trajectory(axes, columns):
    axes.plot(columns["t"], columns["lcs"], marker="." if columns["t"].size == 1 else None, linewidth=1)
    axes.set_xlabel("step t")
    axes.set_ylabel("lazy cosine similarity")
    axes.set_ylim(-1.05, 1.05)


def _sweep_heatmap(axes, columns):
    epsilons = np.unique(columns["epsilon"])
    steps = np.unique(columns["steps"])
    grid = np.full((steps.size, epsilons.size), math.nan)
    for epsilon, step, value in zip(columns["epsilon"], columns["steps"], columns["mean_psnr"]):
        grid[np.searchsorted(steps, step), np.searchsorted(epsilons, epsilon)] = value
    if grid.size:
        mesh = axes.pcolormesh(np.arange(epsilons.size + 1), np.arange(steps.size + 1), np.ma.masked_invalid(grid),
                               shading="flat")
        axes.figure.colorbar(mesh, ax=axes, label="mean target PSNR (dB)")
        axes.set_xticks(np.arange(epsilons.size) + 0.5, [f"{e:g}" for e in epsilons])
        axes.set_yticks(np.arange(steps.size) + 0.5, [f"{s:g}" for s in steps])
    axes.set_xlabel("epsilon")
    axes.set_ylabel("steps T")


def _ablation_curve(axes, columns):
    order = np.argsort(columns["k"], kind="stable")
    axes.plot(columns["k"][order], columns["mean_psnr"][order], marker="o", linewidth=1)
    axes.set_xlabel("decay divisor k")
    axes.set_ylabel("mean target PSNR (dB)")


PLOTS = {"lcs_trajectory": _lcs_trajectory,
         "sweep_heatmap": _sweep_heatmap,
         "ablation_curve": _ablation_curve}


def emit_plot(csv_path: str, kind: str, out_path: str) -> None:
    columns = read_columns(csv_path, kind)
    with plt.rc_context({"svg.hashsalt": "gsm-forge", "svg.fonttype": "path"}):
        figure, axes = plt.subplots(figsize=(6, 4))
        try:
            PLOTS[kind](axes, columns)
            axes.set_title(kind.replace("_", " "))
            figure.tight_layout()
            figure.savefig(out_path, format="svg", metadata={"Date": None})
        finally:
            plt.close(figure)
