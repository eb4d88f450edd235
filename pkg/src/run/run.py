"""
Experiment commands. Every command takes the parsed CLI arguments and returns the process exit code:
0 on success, 2 when at least one pair failed (the run still completes and records the failure in its row) or
training diverged before finishing an epoch.
Config problems raise ConfigError, which the caller maps to exit code 1.
"""
import argparse
import functools
import math
import os
import typing

import jsonpickle
import numpy as np

from .directions import DIRECTION_COLUMNS, check_directions, read_results
from .train import train
from .utils_run import (OBJECTIVE_COLUMNS, REPORT_COLUMNS, RunManifest, STAGE_COLUMNS, SUMMARY_COLUMNS, map_tasks,
                        result_columns, summarize, write_rows)
from .. import __version__
from ..attack import AttackResult, GsmPair, gsm_pairs_objective, init_delta, run_attack
from ..dataclass import AttackConfig, ConfigError, DiagnosticsConfig, ExperimentParameter, JpegConfig, load_config
from ..defense import attack_through_defense, jpeg_image, jpeg_roundtrip
from ..diagnostics import (Preprocess, TrajectoryRecord, calibrate_eta0, check_lemma1, gradient_alignment,
                           identity_ratio, segment_stages, success_rate, write_trajectory_csv)
from ..graph import NonFiniteError, Tensor, no_grad
from ..inputs import load_image, make_benchmark, sample_crops, save_image
from ..interface import emit_plot
from ..metrics import MS_SSIM_WEIGHTS, linf, metric_report, psnr
from ..model import CodecModel, bits_estimate, build_model, encode, decode, presentation
from ..model.checkpoint import WeightFormatError, load_weights, save_weights
from ..model.quantization import quantize
from ..utils_core import color_print, warn

SSIM_WINDOW = 11
WEIGHTS_FILE = "codec.weights"
DECODE_PSNR_GATE = 28.


class AttackTask(typing.NamedTuple):
    model: CodecModel
    pair: GsmPair
    pair_index: int
    attack: AttackConfig
    defense: JpegConfig
    mode: str  # "plain", "defended" (plain attack, evaluated with and without JPEG) or "through_defense"
    eta0: float
    defended_eta0: float
    diagnostics: DiagnosticsConfig
    threshold: float
    grid: typing.Dict[str, typing.Any]
    directory: str
    save_images: bool


def ms_ssim_scales(size: int) -> int:
    scales = 1
    while scales < 3 and scales < len(MS_SSIM_WEIGHTS) and SSIM_WINDOW * 2 ** scales <= size:
        scales += 1
    return scales


def codec_output(model: CodecModel, x: np.ndarray, defense: typing.Optional[JpegConfig] = None
                 ) -> typing.Tuple[np.ndarray, float]:
    """
    Deployed reconstruction (hard quantization, optional hard JPEG in front) and its estimated bpp.
    """
    with no_grad():
        if defense is not None:
            x = jpeg_image(x, defense)
        y_hat = quantize(encode(model, x), "hard")
        return presentation(decode(model, y_hat)), bits_estimate(model, y_hat, x.shape[1], x.shape[2]).bpp.item()


def _run_name(task: AttackTask) -> str:
    grid = "_".join(f"{key}{format(value, 'g') if isinstance(value, float) else value}"
                    for key, value in task.grid.items())
    return "_".join(part for part in (grid, task.pair.pair_id, f"seed{task.attack.seed}") if part)


def jpeg_preprocess(defense: JpegConfig) -> Preprocess:
    return functools.partial(jpeg_image, cfg=defense)


def stage_columns(trajectory: typing.Sequence[TrajectoryRecord], cfg: DiagnosticsConfig
                  ) -> typing.Dict[str, typing.Any]:
    """
    Stage segmentation of the LCS trajectory as row columns, all None when there is nothing to segment (no steps or
    no defined LCS value).
    """
    try:
        stages = segment_stages(trajectory, cfg.smoothing_window, cfg.oscillating_fraction, cfg.refining_fraction)
    except ValueError:
        return dict.fromkeys(STAGE_COLUMNS)
    return {"lcs_acme": stages.lcs_acme[1], "lazying_end": stages.lazying_end,
            "oscillating_end": stages.oscillating_end, "refining_detected": stages.refining_detected,
            "final_smoothed_lcs": stages.final_smoothed_lcs}


def _evaluate(task: AttackTask, result: AttackResult, defended: bool, name: str) -> typing.Dict[str, typing.Any]:
    """
    Metrics of one attack result for the pipeline it is deployed in. Behind the defense every diagnostic (residual,
    region, amplification check, identity ratio) is measured on hard JPEG followed by the codec.
    """
    pair = task.pair
    defense = task.defense if defended else None
    preprocess = jpeg_preprocess(task.defense) if defended else None
    eta0 = task.defended_eta0 if defended else task.eta0
    reconstruction, bpp = codec_output(task.model, result.adversarial, defense)
    clean_reconstruction, clean_bpp = codec_output(task.model, pair.source, defense)
    report = metric_report(reconstruction, pair.target, bpp, linf(result.adversarial, pair.source),
                           ms_ssim_scales(min(pair.target.shape[1:])))
    lemma1 = check_lemma1(task.model, pair.source, pair.target, result.adversarial, task.threshold, eta0, preprocess)
    alignment = gradient_alignment(task.model, pair.source, init_delta(task.attack, pair.source.shape,
                                                                       task.pair_index), pair.target)
    if task.save_images:
        save_image(reconstruction, os.path.join(task.directory, "images", f"{name}_reconstruction.ppm"))
    row = {"pair_id": pair.pair_id, "seed": task.attack.seed, **report._asdict(),
           "clean_psnr_db": psnr(clean_reconstruction, pair.target), "clean_bpp": clean_bpp,
           "eta": lemma1.eta, "region": lemma1.region.value, "lemma1": lemma1.verdict,
           "identity_ratio": identity_ratio(task.model, pair.source, pair.target, preprocess),
           "grad_alignment": alignment.identity_jacobian, **stage_columns(result.trajectory, task.diagnostics),
           "eval_defense": "with" if defended else "without", "error": result.error}
    return {**row, **task.grid}


def _failed_row(task: AttackTask, error: str) -> typing.Dict[str, typing.Any]:
    return {"pair_id": task.pair.pair_id, "seed": task.attack.seed, "error": error, **task.grid}


def execute_task(task: AttackTask) -> typing.List[typing.Dict[str, typing.Any]]:
    """
    Runs one attack and returns its result rows. Never raises: a failure becomes a row carrying the error.
    The first row of a finished attack carries its final perturbation under "delta"; `Experiment.run` removes it.
    Plain attacks are evaluated behind hard JPEG when defense.enabled is set.
    """
    name = _run_name(task)
    try:
        if task.mode == "through_defense":
            result = attack_through_defense(task.model, task.pair, task.attack, task.defense, task.pair_index)
        else:
            result = run_attack(task.model, task.pair, task.attack, task.pair_index)
        write_trajectory_csv(result.trajectory, os.path.join(task.directory, "trajectories", f"{name}.csv"))
        if task.save_images:
            save_image(result.adversarial, os.path.join(task.directory, "images", f"{name}_adversarial.ppm"))
        if task.mode == "plain":
            rows = [_evaluate(task, result, task.defense.enabled, name)]
        elif task.mode == "through_defense":
            rows = [{**_evaluate(task, result, True, name), "attack_defense": "with"}]
        else:
            rows = [{**_evaluate(task, result, False, f"{name}_undefended"), "attack_defense": "without"},
                    {**_evaluate(task, result, True, name), "attack_defense": "without"}]
        rows[0]["delta"] = result.final_delta
        return rows
    except Exception as exc:  # one failing pair never aborts the run
        warn(f"{name} failed: {type(exc).__name__}: {exc}")
        row = _failed_row(task, f"{type(exc).__name__}: {exc}")
        if task.mode == "defended":
            return [{**row, "attack_defense": "without", "eval_defense": condition}
                    for condition in ("without", "with")]
        if task.mode == "through_defense":
            return [{**row, "attack_defense": "with", "eval_defense": "with"}]
        return [{**row, "eval_defense": "with" if task.defense.enabled else "without"}]


class Experiment:
    """
    Loaded config, output directory and manifest shared by the attack commands.
    """

    def __init__(self, args: argparse.Namespace, needs_weights: bool = True):
        self.params: ExperimentParameter = load_config(args.config)
        self.directory = self.params.output.directory
        os.makedirs(self.directory, exist_ok=True)
        for sub in ("trajectories", "images", "plots"):
            os.makedirs(os.path.join(self.directory, sub), exist_ok=True)
        self.manifest = RunManifest(self.directory, self.params.config_hash(), __version__)
        config_path = os.path.join(self.directory, "run_config.json")
        with open(config_path, 'w') as f:
            f.write(jsonpickle.dumps(self.params.dict(), indent=4))
        self.manifest.record(config_path)
        self.model: typing.Optional[CodecModel] = None
        self.objectives: typing.List[typing.Dict[str, typing.Any]] = []
        if needs_weights:
            self.model = self.load_model(getattr(args, "weights", None))

    @staticmethod
    def load_model(path: typing.Optional[str]) -> CodecModel:
        if not path or not os.path.isfile(path):
            raise ConfigError(f"weights file {path!r} does not exist; run `train` first")
        try:
            return load_weights(path)
        except WeightFormatError as exc:
            raise ConfigError(str(exc)) from exc

    def benchmark(self) -> typing.List[GsmPair]:
        try:
            return self._benchmark()
        except ConfigError:
            raise
        except ValueError as exc:  # unreadable images or an unusable source directory
            raise ConfigError(str(exc)) from exc

    def _benchmark(self) -> typing.List[GsmPair]:
        attack, data = self.params.attack, self.params.data
        if attack.pairs:
            return [GsmPair(load_image(source), load_image(target), f"pair{idx}",
                            {"source": source, "target": target})
                    for idx, (source, target) in enumerate(attack.pairs)]
        if not data.source_dir:
            raise ConfigError("neither attack.pairs nor data.source_dir is set")
        with self.manifest.phase("benchmark"):
            pairs = make_benchmark(data.source_dir, data.crop, data.pairs, data.seed)
        for pair in pairs:
            color_print(f"{pair.pair_id}: {pair.metadata}")
        return pairs

    def eta0(self, pairs: typing.Sequence[GsmPair]) -> typing.Tuple[float, float]:
        """
        Residual thresholds of the bare codec and of the codec behind hard JPEG, either both the configured eta0 or
        calibrated on held-out crops (the pair sources when there are none).
        """
        diagnostics, data = self.params.diagnostics, self.params.data
        if diagnostics.eta0 is not None:
            return float(diagnostics.eta0), float(diagnostics.eta0)
        if data.source_dir and data.heldout_crops:
            images = sample_crops(data.source_dir, data.crop, data.heldout_crops, data.seed, stream=1)
        else:
            images = [pair.source for pair in pairs]
        if not images:
            return 0., 0.
        eta0 = calibrate_eta0(self.model, images, diagnostics.eta0_multiple)
        defended = calibrate_eta0(self.model, images, diagnostics.eta0_multiple,
                                  jpeg_preprocess(self.params.defense))
        color_print(f"Residual threshold eta0 = {eta0:.6g}, behind JPEG {defended:.6g} "
                    f"({diagnostics.eta0_multiple}x clean median)")
        return eta0, defended

    def tasks(self, pairs: typing.Sequence[GsmPair], attack: AttackConfig, mode: str,
              eta0: typing.Tuple[float, float], grid: typing.Optional[typing.Dict[str, typing.Any]] = None
              ) -> typing.List[AttackTask]:
        return [AttackTask(self.model, pair, idx, attack.replace(seed=seed), self.params.defense, mode, eta0[0],
                           eta0[1], self.params.diagnostics, self.params.attack.success_threshold_psnr,
                           dict(grid or {}), self.directory, self.params.output.save_images)
                for seed in self.params.attack.seeds for idx, pair in enumerate(pairs)]

    def run(self, tasks: typing.Sequence[AttackTask], phase: str) -> typing.List[typing.Dict[str, typing.Any]]:
        with self.manifest.phase(phase):
            results = map_tasks(execute_task, tasks)
        rows, finished = [], []
        for task, task_rows in zip(tasks, results):
            delta = task_rows[0].pop("delta", None)
            if delta is not None:
                finished.append((task, delta))
            rows.extend(task_rows)
        self.manifest.rows.extend(rows)
        self.objectives.extend(self.pair_objectives(finished))
        return rows

    @staticmethod
    def pair_objectives(finished: typing.Sequence[typing.Tuple[AttackTask, np.ndarray]]
                        ) -> typing.List[typing.Dict[str, typing.Any]]:
        """
        Benchmark objective: the mean single-pair objective over every pair attacked with the same grid point and
        seed, evaluated at the final perturbations. Attacks through the defense are scored through the soft JPEG.
        """
        groups: typing.Dict[tuple, typing.List[typing.Tuple[AttackTask, np.ndarray]]] = {}
        for task, delta in finished:
            groups.setdefault((tuple(task.grid.items()), task.mode, task.attack.seed), []).append((task, delta))
        out = []
        for (grid, mode, seed), members in groups.items():
            task = members[0][0]
            transform = None
            if mode == "through_defense":
                soft = task.defense.replace(rounding="soft")
                transform = functools.partial(jpeg_roundtrip, cfg=soft)
            deltas = [Tensor(delta, requires_grad=True, name="delta") for _, delta in members]
            try:
                objective = gsm_pairs_objective(task.model, [member.pair for member, _ in members], deltas, transform)
            except NonFiniteError as exc:
                warn(f"benchmark objective of {dict(grid)} seed {seed} is not finite: {exc}")
                objective = None
            out.append({**dict(grid), "seed": seed, "pairs": len(members), "mean_objective": objective})
        return out

    def write_objectives(self, keys: typing.Sequence[str]) -> None:
        self.write("objective.csv", self.objectives, tuple(keys) + OBJECTIVE_COLUMNS)

    def write(self, name: str, rows: typing.Sequence[typing.Dict[str, typing.Any]],
              columns: typing.Sequence[str]) -> str:
        return self.manifest.record(write_rows(rows, columns, os.path.join(self.directory, name)))

    def plot(self, csv_path: str, kind: str, name: str) -> None:
        if not self.params.output.emit_plots:
            return
        out_path = os.path.join(self.directory, "plots", name)
        emit_plot(csv_path, kind, out_path)
        self.manifest.record(out_path)

    def write_success_rate(self, rows: typing.Sequence[typing.Dict[str, typing.Any]], name: str) -> None:
        values: typing.Dict[str, typing.List[float]] = {}
        for row in rows:
            values.setdefault(row["pair_id"], [])
            if not row.get("error"):
                values[row["pair_id"]].append(row["psnr_db"])
        rates = success_rate(values, self.params.attack.success_threshold_psnr)
        self.write(name, [{"pair_id": key, "success_rate": value} for key, value in rates.items()],
                   ("pair_id", "success_rate"))

    def finish(self, rows: typing.Sequence[typing.Dict[str, typing.Any]]) -> int:
        for path in sorted(os.listdir(os.path.join(self.directory, "trajectories"))):
            self.manifest.record(os.path.join(self.directory, "trajectories", path))
        for path in sorted(os.listdir(os.path.join(self.directory, "images"))):
            self.manifest.record(os.path.join(self.directory, "images", path))
        color_print(f"Manifest written to {self.manifest.write()}")
        failures = sum(1 for row in rows if row.get("error"))
        if failures:
            warn(f"{failures} of {len(rows)} runs failed, see the error column")
            return 2
        return 0


def codec_report(model: CodecModel, images: typing.Sequence[np.ndarray], identity_threshold: float
                 ) -> typing.List[typing.Dict[str, typing.Any]]:
    """
    Per held-out crop: clean decode PSNR, bpp and the identity ratio against the next crop. Warns when the mean
    PSNR misses DECODE_PSNR_GATE or the median identity ratio is not below `identity_threshold`.
    """
    rows = []
    for idx, x in enumerate(images):
        reconstruction, bpp = codec_output(model, x)
        ratio = identity_ratio(model, x, images[(idx + 1) % len(images)]) if len(images) > 1 else None
        rows.append({"crop": idx, "psnr_db": psnr(reconstruction, x), "bpp": bpp, "identity_ratio": ratio})
    if not rows:
        return rows
    mean_psnr = float(np.mean([row["psnr_db"] for row in rows]))
    message = f"Held-out decode PSNR {mean_psnr:.2f} dB (gate {DECODE_PSNR_GATE:g} dB)"
    if mean_psnr >= DECODE_PSNR_GATE:
        color_print(message)
    else:
        warn(message)
    ratios = [row["identity_ratio"] for row in rows if row["identity_ratio"] is not None]
    if ratios:
        median = float(np.median(ratios))
        message = f"Held-out identity ratio {median:.4f} (gate {identity_threshold:g})"
        if median < identity_threshold:
            color_print(message)
        else:
            warn(message)
    return rows


def cmd_train(args: argparse.Namespace) -> int:
    """
    Trains the codec and writes its weights, the loss curve and a held-out report. Returns 2 without writing weights
    when training diverged before finishing a single epoch.
    """
    experiment = Experiment(args, needs_weights=False)
    codec, data = experiment.params.codec, experiment.params.data
    if not data.source_dir:
        raise ConfigError("data.source_dir is needed for training")
    with experiment.manifest.phase("data"):
        try:
            dataset = sample_crops(data.source_dir, data.crop, data.train_crops, data.seed, stream=0)
            heldout = sample_crops(data.source_dir, data.crop, data.heldout_crops, data.seed, stream=1)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    model = build_model(codec.latent_channels, codec.hidden_channels, codec.kernel_size, codec.lam, codec.seed,
                        codec.initializer)
    with experiment.manifest.phase("train"):
        model, history = train(model, dataset, codec.epochs, codec.learning_rate, codec.seed,
                               codec.reduce_lr_on_plateau_timespan, codec.reduce_lr_on_plateau_reduction,
                               codec.print_every)
    experiment.write("train_loss.csv",
                     [{"epoch": epoch, "loss": loss, "learning_rate": lr}
                      for epoch, (loss, lr) in enumerate(zip(history.losses, history.learning_rates))],
                     ("epoch", "loss", "learning_rate"))
    if history.diverged and not history.losses:
        warn(f"training diverged in the first epoch at learning_rate {codec.learning_rate:g}, no weights written")
        experiment.finish([])
        return 2
    if history.diverged:
        warn("training diverged, the saved weights are the last finite ones")
    weights_path = getattr(args, "weights", None) or os.path.join(experiment.directory, WEIGHTS_FILE)
    save_weights(model, weights_path)
    if os.path.abspath(weights_path).startswith(os.path.abspath(experiment.directory) + os.sep):
        experiment.manifest.record(weights_path)
    color_print(f"Weights written to {weights_path}")
    with experiment.manifest.phase("report"):
        report = codec_report(model, heldout, experiment.params.diagnostics.identity_ratio_threshold)
    experiment.write("codec_report.csv", report, REPORT_COLUMNS)
    return experiment.finish([])


def cmd_attack(args: argparse.Namespace) -> int:
    """
    The configured attack over every (pair, seed), plus fixed-step PGD at every baseline step size.
    """
    experiment = Experiment(args)
    attack = experiment.params.attack
    pairs = experiment.benchmark()
    eta0 = experiment.eta0(pairs)
    methods = [(attack.schedule if attack.schedule == "fixed" else "pgd2", attack)]
    methods += [(f"fixed_{alpha:g}", attack.replace(schedule="fixed", alpha0=alpha))
                for alpha in attack.baseline_alphas]
    tasks = [task for method, cfg in methods
             for task in experiment.tasks(pairs, cfg, "plain", eta0, {"method": method})]
    rows = experiment.run(tasks, "attack")
    experiment.write("results.csv", rows, result_columns(("method",)))
    experiment.write("summary.csv", summarize(rows, ("method",)), ("method",) + SUMMARY_COLUMNS)
    experiment.write_objectives(("method",))
    experiment.write_success_rate([row for row in rows if row["method"] == methods[0][0]], "success_rate.csv")
    if experiment.params.output.emit_plots:
        for task in tasks:
            name = _run_name(task)
            trajectory = os.path.join(experiment.directory, "trajectories", f"{name}.csv")
            if os.path.isfile(trajectory):
                experiment.plot(trajectory, "lcs_trajectory", f"{name}_lcs.svg")
    return experiment.finish(rows)


def cmd_sweep(args: argparse.Namespace) -> int:
    experiment = Experiment(args)
    attack = experiment.params.attack
    pairs = experiment.benchmark()
    eta0 = experiment.eta0(pairs)
    tasks = [task for epsilon in attack.sweep_epsilons for steps in attack.sweep_steps
             for task in experiment.tasks(pairs, attack.replace(epsilon=epsilon, steps=steps), "plain", eta0,
                                          {"epsilon": float(epsilon), "steps": int(steps)})]
    rows = experiment.run(tasks, "sweep")
    experiment.write("results.csv", rows, result_columns(("epsilon", "steps")))
    summary_path = experiment.write("sweep_summary.csv", summarize(rows, ("epsilon", "steps")),
                                    ("epsilon", "steps") + SUMMARY_COLUMNS)
    experiment.write_objectives(("epsilon", "steps"))
    experiment.write_success_rate(rows, "success_rate.csv")
    experiment.plot(summary_path, "sweep_heatmap", "sweep_heatmap.svg")
    return experiment.finish(rows)


def parse_grid(grid: typing.Optional[str], default: typing.Sequence[float]) -> typing.List[float]:
    if not grid:
        return [float(k) for k in default]
    try:
        values = [float(k) for k in grid.split(",") if k.strip()]
    except ValueError as exc:
        raise ConfigError(f"--grid has to be a comma-separated list of numbers, got {grid!r}") from exc
    if not values or any(not math.isfinite(k) or k <= 0 for k in values):
        raise ConfigError(f"--grid values have to be finite and > 0, got {grid!r}")
    return values


def cmd_ablate_k(args: argparse.Namespace) -> int:
    """
    Decay-factor ablation holding everything else fixed. Grid values <= 1 multiply the step size every period,
    values > 1 divide it.
    """
    experiment = Experiment(args)
    attack = experiment.params.attack
    pairs = experiment.benchmark()
    eta0 = experiment.eta0(pairs)
    grid = parse_grid(getattr(args, "grid", None), attack.ablation_grid)
    tasks = [task for k in grid
             for task in experiment.tasks(pairs, attack.replace(schedule="periodic_geometric", decay_factor=k,
                                                                reciprocal_decay=k > 1), "plain", eta0, {"k": k})]
    rows = experiment.run(tasks, "ablate_k")
    experiment.write("results.csv", rows, result_columns(("k",)))
    summary_path = experiment.write("ablation_summary.csv", summarize(rows, ("k",)), ("k",) + SUMMARY_COLUMNS)
    experiment.write_objectives(("k",))
    experiment.plot(summary_path, "ablation_curve", "ablation_curve.svg")
    return experiment.finish(rows)


def cmd_defense(args: argparse.Namespace) -> int:
    """
    Three conditions: plain attack without defense, plain attack evaluated behind hard JPEG, and the attack through
    the differentiable JPEG evaluated behind hard JPEG.
    """
    experiment = Experiment(args)
    attack = experiment.params.attack
    pairs = experiment.benchmark()
    eta0 = experiment.eta0(pairs)
    tasks = experiment.tasks(pairs, attack, "defended", eta0, {"condition": "naive"})
    tasks += experiment.tasks(pairs, attack, "through_defense", eta0, {"condition": "bypass"})
    rows = experiment.run(tasks, "defense")
    keys = ("attack_defense", "eval_defense")
    experiment.write("results.csv", rows, result_columns(("condition", "attack_defense")))
    experiment.write("defense_summary.csv", summarize(rows, keys), keys + SUMMARY_COLUMNS)
    experiment.write_objectives(("condition",))
    return experiment.finish(rows)


def cmd_plot(args: argparse.Namespace) -> int:
    emit_plot(args.input, args.kind, args.out)
    color_print(f"Plot written to {args.out}")
    return 0


def cmd_directions(args: argparse.Namespace) -> int:
    """
    Verdicts of the direction claims over the results.csv of finished benchmark runs, written to `args.out`.
    """
    try:
        runs = [read_results(directory) for directory in args.runs]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    verdicts = check_directions(runs, args.success_threshold_psnr)
    write_rows(verdicts, DIRECTION_COLUMNS, args.out)
    color_print(f"Direction verdicts written to {args.out}")
    return 0
