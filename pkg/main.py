"""
"Main" script that parses arguments and starts the selected experiment command.
"""

import argparse
import sys

from src import main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Targeted attacks on a toy learned image codec.")
    commands = parser.add_subparsers(dest="run_mode", metavar="command")

    train = commands.add_parser("train", help="Train the codec on crops of data.source_dir.")
    train.add_argument("--config", type=str, required=True, help="Experiment config (JSON or section.key = value).")
    train.add_argument("--weights", type=str, default=None, help="Where to write the weights. "
                                                                  "Defaults to <output.directory>/codec.weights.")

    for name, help_text in (("attack", "Attack every pair and seed, plus the fixed-step baselines."),
                            ("sweep", "Grid over attack.sweep_epsilons x attack.sweep_steps."),
                            ("ablate-k", "Grid over the decay factor."),
                            ("defense", "JPEG defense protocol: naive attack and attack through the defense.")):
        command = commands.add_parser(name, help=help_text)
        command.add_argument("--config", type=str, required=True, help="Experiment config.")
        command.add_argument("--weights", type=str, required=True, help="Weights written by `train`.")
        if name == "ablate-k":
            command.add_argument("--grid", type=str, default=None,
                                 help="Comma-separated decay factors. Defaults to attack.ablation_grid.")

    plot = commands.add_parser("plot", help="Render a result CSV as SVG.")
    plot.add_argument("--kind", type=str, required=True, help="lcs_trajectory, sweep_heatmap or ablation_curve")
    plot.add_argument("--in", dest="input", type=str, required=True, help="CSV file")
    plot.add_argument("--out", type=str, required=True, help="SVG file")

    directions = commands.add_parser("directions", help="Check the benchmark direction claims on finished runs.")
    directions.add_argument("--runs", type=str, nargs="+", required=True,
                            help="Output directories of attack, sweep, ablate-k and defense runs.")
    directions.add_argument("--out", type=str, required=True, help="CSV file for the verdicts")
    directions.add_argument("--success_threshold_psnr", type=float, default=22.,
                            help="Target PSNR (dB) from which an attack counts as successful.")
    return parser


if __name__ == "__main__":
    args = build_parser().parse_args()

    modes = ','.join(main.RUN_MODE_FNS.keys())
    if args.run_mode not in main.RUN_MODE_FNS:
        raise ValueError(f"'{args.run_mode}' is not a supported command, please use one of {modes}.")

    sys.exit(main.main(args))
