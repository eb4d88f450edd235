"""
"Sub Main" that maps the CLI sub-command onto its command function and the process exit code.
"""

import argparse

from .dataclass import ConfigError
from .interface import SchemaError
from .run.run import cmd_ablate_k, cmd_attack, cmd_defense, cmd_directions, cmd_plot, cmd_sweep, cmd_train
from .utils_core import color_print

EXIT_SUCCESS = 0
EXIT_CONFIG_ERROR = 1
EXIT_PARTIAL_FAILURE = 2

RUN_MODE_FNS = {'train': cmd_train,
                'attack': cmd_attack,
                'sweep': cmd_sweep,
                'ablate-k': cmd_ablate_k,
                'defense': cmd_defense,
                'plot': cmd_plot,
                'directions': cmd_directions}


def main(args: argparse.Namespace) -> int:
    """
    Runs the selected command.
    :param args: argparse arguments from the parent main function
    :return: exit code, 1 for configuration or input-schema errors
    """
    try:
        return RUN_MODE_FNS[args.run_mode](args)
    except (ConfigError, SchemaError) as exc:
        color_print(f"ERROR: {exc}", "\x1b[31;1m")
        return EXIT_CONFIG_ERROR
