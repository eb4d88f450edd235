import contextlib
import csv
import multiprocessing
import os
import time
import typing

import jsonpickle
import numpy as np

from ..diagnostics import format_real
from ..utils_core import color_print, sha256_file, worker_count

RESULT_COLUMNS = ("pair_id", "seed", "psnr_db", "ms_ssim", "bpp", "delta_linf")
STAGE_COLUMNS = ("lcs_acme", "lazying_end", "oscillating_end", "refining_detected", "final_smoothed_lcs")
EXTRA_COLUMNS = ("clean_psnr_db", "clean_bpp", "eta", "region", "lemma1", "identity_ratio", "grad_alignment") + \
    STAGE_COLUMNS + ("eval_defense", "error")
OBJECTIVE_COLUMNS = ("seed", "pairs", "mean_objective")
REPORT_COLUMNS = ("crop", "psnr_db", "bpp", "identity_ratio")
SUMMARY_COLUMNS = ("mean_psnr", "std_psnr", "mean_ms_ssim", "std_ms_ssim", "mean_bpp", "std_bpp", "runs", "failures")


class RunManifest:
    """
    Everything a run produced: config hash, tool version, result rows, wall-clock per phase and a SHA-256 for every
    output file. Paths are stored relative to the output directory.
    """

    def __init__(self, directory: str, config_hash: str, version: str):
        self.directory = directory
        self.config_hash = config_hash
        self.version = version
        self.rows: typing.List[typing.Dict[str, typing.Any]] = []
        self.phases: typing.Dict[str, float] = {}
        self.outputs: typing.Dict[str, str] = {}

    @contextlib.contextmanager
    def phase(self, name: str):
        start_time = time.time()
        color_print(f"Starting {name}")
        try:
            yield
        finally:
            self.phases[name] = self.phases.get(name, 0.) + time.time() - start_time
            color_print(f"Finished {name} in {self.phases[name]:.1f}s")

    def path(self, *parts: str) -> str:
        path = os.path.join(self.directory, *parts)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        return path

    def record(self, path: str) -> str:
        self.outputs[os.path.relpath(path, self.directory)] = sha256_file(path)
        return path

    def dict(self) -> typing.Dict[str, typing.Any]:
        return {"config_hash": self.config_hash,
                "version": self.version,
                "rows": self.rows,
                "phases": self.phases,
                "outputs": dict(sorted(self.outputs.items()))}

    def write(self) -> str:
        path = self.path("manifest.json")
        with open(path, 'w') as f:
            f.write(jsonpickle.dumps(self.dict(), indent=4, unpicklable=False))
        return path


def format_cell(value: typing.Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_real(float(value))
    return str(value)


def write_rows(rows: typing.Iterable[typing.Dict[str, typing.Any]], columns: typing.Sequence[str], path: str) -> str:
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_cell(row.get(column)) for column in columns])
    return path


def result_columns(grid: typing.Sequence[str] = ()) -> typing.Tuple[str, ...]:
    return RESULT_COLUMNS + EXTRA_COLUMNS + tuple(grid)


def summarize(rows: typing.Sequence[typing.Dict[str, typing.Any]], keys: typing.Sequence[str]
              ) -> typing.List[typing.Dict[str, typing.Any]]:
    """
    Mean and standard deviation over seeds and pairs for every distinct value of `keys`, in first-seen order.
    Failed rows are counted but excluded from the statistics.
    """
    groups: typing.Dict[tuple, typing.List[typing.Dict[str, typing.Any]]] = {}
    for row in rows:
        groups.setdefault(tuple(row[key] for key in keys), []).append(row)
    out = []
    for group_key, members in groups.items():
        valid = [row for row in members if not row.get("error")]
        summary = dict(zip(keys, group_key))
        for column, name in (("psnr_db", "psnr"), ("ms_ssim", "ms_ssim"), ("bpp", "bpp")):
            values = np.array([row[column] for row in valid], dtype=np.float64)
            summary[f"mean_{name}"] = float(values.mean()) if values.size else None
            summary[f"std_{name}"] = float(values.std()) if values.size else None
        summary["runs"] = len(members)
        summary["failures"] = len(members) - len(valid)
        out.append(summary)
    return out


def map_tasks(function: typing.Callable[[typing.Any], typing.Any], tasks: typing.Sequence[typing.Any]
              ) -> typing.List[typing.Any]:
    """
    Ordered map over independent tasks with at most GSM_FORGE_THREADS worker processes.
    """
    workers = worker_count(len(tasks)) if tasks else 1
    if workers == 1:
        return [function(task) for task in tasks]
    color_print(f"Running {len(tasks)} tasks on {workers} workers")
    with multiprocessing.Pool(workers) as pool:
        return pool.map(function, tasks, chunksize=1)
