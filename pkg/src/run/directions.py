"""
Checks the benchmark's direction claims against the results.csv files of finished attack, sweep, ablate-k and
defense runs. Every claim becomes one verdict row; claims whose runs are missing are reported as skipped.
"""
import csv
import math
import os
import typing

import numpy as np

from ..utils_core import color_print, warn

DIRECTION_COLUMNS = ("direction", "value", "threshold", "verdict")
SUPERIORITY_MARGIN_DB = 1.
LAZY_LCS = 0.9
REFINING_FRACTION = 0.6
RUN_FRACTION = 0.8
BPP_INFLATION = 1.5
DEFENSE_DROP_DB = 5.
BYPASS_RECOVERY_DB = 2.

Rows = typing.List[typing.Dict[str, str]]


def read_results(directory: str) -> Rows:
    path = os.path.join(directory, "results.csv")
    if not os.path.isfile(path):
        raise ValueError(f"{directory} holds no results.csv")
    with open(path, newline='') as f:
        return list(csv.DictReader(f))


def run_kind(rows: Rows) -> typing.Optional[str]:
    """
    Which command wrote the rows, told apart by its grid column.
    """
    if not rows:
        return None
    for column, kind in (("condition", "defense"), ("method", "attack"), ("epsilon", "sweep"), ("k", "ablate")):
        if column in rows[0]:
            return kind
    return None


def number(value: str) -> float:
    return float(value) if value not in ("", None) else math.nan


def valid(rows: Rows) -> Rows:
    return [row for row in rows if not row.get("error")]


def mean_psnr(rows: Rows) -> float:
    values = [number(row["psnr_db"]) for row in valid(rows)]
    return float(np.mean(values)) if values else math.nan


def _verdict(name: str, value: float, threshold: float, holds: bool) -> typing.Dict[str, typing.Any]:
    if math.isnan(value):
        return {"direction": name, "value": None, "threshold": threshold, "verdict": "skipped"}
    return {"direction": name, "value": value, "threshold": threshold, "verdict": "holds" if holds else "fails"}


def superiority(rows: Rows) -> typing.Dict[str, typing.Any]:
    """
    Margin of the decaying schedule over the best fixed-step baseline in mean target PSNR.
    """
    methods = sorted({row["method"] for row in rows})
    baselines = [mean_psnr([row for row in rows if row["method"] == method])
                 for method in methods if method.startswith("fixed_")]
    margin = mean_psnr([row for row in rows if row["method"] == "pgd2"]) - max(baselines, default=math.nan)
    return _verdict("superiority", margin, SUPERIORITY_MARGIN_DB, margin >= SUPERIORITY_MARGIN_DB)


def lazy_convergence(rows: Rows) -> typing.List[typing.Dict[str, typing.Any]]:
    """
    The smallest fixed step stays near the lazy perturbation, the decaying schedule falls well below its LCS acme.
    """
    fixed = [(float(row["method"][len("fixed_"):]), row)
             for row in valid(rows) if row["method"].startswith("fixed_")]
    smallest = min(alpha for alpha, _ in fixed) if fixed else None
    lazy = [number(row["final_smoothed_lcs"]) for alpha, row in fixed if alpha == smallest]
    lazy = [value for value in lazy if not math.isnan(value)]
    refined = [(number(row["final_smoothed_lcs"]), number(row["lcs_acme"]))
               for row in valid(rows) if row["method"] == "pgd2"]
    refined = [final < REFINING_FRACTION * acme for final, acme in refined if not math.isnan(final + acme)]
    lazy_share = float(np.mean([value > LAZY_LCS for value in lazy])) if lazy else math.nan
    refined_share = float(np.mean(refined)) if refined else math.nan
    return [_verdict("small_step_stays_lazy", lazy_share, RUN_FRACTION, lazy_share >= RUN_FRACTION),
            _verdict("decay_leaves_lazy_example", refined_share, RUN_FRACTION, refined_share >= RUN_FRACTION)]


def amplification(rows: Rows) -> typing.Dict[str, typing.Any]:
    """
    Number of successful examples classified into the identity region; has to be zero.
    """
    checked = [row for row in valid(rows) if row.get("lemma1")]
    violations = float(sum(row["lemma1"] == "violated" for row in checked)) if checked else math.nan
    return _verdict("successful_examples_amplify", violations, 0., violations == 0)


def bpp_inflation(rows: Rows, success_threshold_psnr: float) -> typing.Dict[str, typing.Any]:
    successful = [row for row in valid(rows) if number(row["psnr_db"]) >= success_threshold_psnr]
    ratio = math.nan
    if successful:
        ratio = float(np.mean([number(row["bpp"]) for row in successful]) /
                      np.mean([number(row["clean_bpp"]) for row in successful]))
    return _verdict("bpp_inflation", ratio, BPP_INFLATION, ratio > BPP_INFLATION)


def budget_monotonicity(rows: Rows) -> typing.Dict[str, typing.Any]:
    """
    Smallest step in mean target PSNR between consecutive budgets at any fixed T; non-negative when monotone.
    """
    steps = sorted({number(row["steps"]) for row in rows})
    epsilons = sorted({number(row["epsilon"]) for row in rows})
    worst = math.nan
    for count in steps:
        means = [mean_psnr([row for row in rows if number(row["steps"]) == count and number(row["epsilon"]) == eps])
                 for eps in epsilons]
        for low, high in zip(means, means[1:]):
            worst = high - low if math.isnan(worst) else min(worst, high - low)
    return _verdict("budget_monotonicity", worst, 0., worst >= 0)


def defense(rows: Rows) -> typing.List[typing.Dict[str, typing.Any]]:
    def condition(name: str, evaluated: str) -> float:
        return mean_psnr([row for row in rows if row["condition"] == name and row["eval_defense"] == evaluated])

    behind_jpeg = condition("naive", "with")
    drop = condition("naive", "without") - behind_jpeg
    recovery = condition("bypass", "with") - behind_jpeg
    return [_verdict("jpeg_drops_naive_attack", drop, DEFENSE_DROP_DB, drop >= DEFENSE_DROP_DB),
            _verdict("bypass_recovers", recovery, BYPASS_RECOVERY_DB, recovery >= BYPASS_RECOVERY_DB)]


def ablation_shape(rows: Rows) -> typing.Dict[str, typing.Any]:
    """
    Position of the best decay factor in the sorted grid; holds when it is neither endpoint.
    """
    grid = sorted({number(row["k"]) for row in rows})
    means = [mean_psnr([row for row in rows if number(row["k"]) == k]) for k in grid]
    if len(grid) < 3 or all(math.isnan(value) for value in means):
        return _verdict("ablation_interior_maximum", math.nan, 0., False)
    best = int(np.nanargmax(means))
    return _verdict("ablation_interior_maximum", float(grid[best]), 0., 0 < best < len(grid) - 1)


def check_directions(runs: typing.Sequence[Rows], success_threshold_psnr: float = 22.
                     ) -> typing.List[typing.Dict[str, typing.Any]]:
    by_kind: typing.Dict[str, Rows] = {}
    for rows in runs:
        kind = run_kind(rows)
        if kind is not None:
            by_kind.setdefault(kind, []).extend(rows)
    attack = by_kind.get("attack", [])
    everything = [row for rows in by_kind.values() for row in rows]
    verdicts = [superiority(attack), *lazy_convergence(attack), amplification(everything),
                bpp_inflation(everything, success_threshold_psnr), budget_monotonicity(by_kind.get("sweep", [])),
                *defense(by_kind.get("defense", [])), ablation_shape(by_kind.get("ablate", []))]
    for verdict in verdicts:
        message = f"{verdict['direction']}: {verdict['verdict']} (value {verdict['value']}, " \
                  f"threshold {verdict['threshold']})"
        if verdict["verdict"] == "fails":
            warn(message)
        else:
            color_print(message)
    return verdicts
