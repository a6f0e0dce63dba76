import argparse
import logging
import os
import sys
from typing import List, Optional
from logger import setup_logging
from errors import ChaosRashomonError, ConfigError
from harness import (
    ExperimentConfig,
    cmd_lyapunov,
    cmd_pipeline,
    cmd_report,
    cmd_select,
    cmd_simulate,
    cmd_sweep,
)
import config

COMMANDS = {
    "simulate": cmd_simulate,
    "pipeline": cmd_pipeline,
    "lyapunov": cmd_lyapunov,
    "select": cmd_select,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="overrides master_seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--grid", choices=("desk", "full"), help="reservoir hyperparameter grid")
    common.add_argument("--threads", type=int, help="worker threads for pool training and evaluation")

    parser = argparse.ArgumentParser(
        prog="chaos-rashomon",
        description="Reservoir pools, horizon-constrained Rashomon sets and decision-aligned selection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate a trajectory to CSV")
    sub.add_parser("pipeline", parents=[common], help="run the full experiment")
    sub.add_parser("report", parents=[common], help="write figure-data CSVs from a run directory")
    sub.add_parser("lyapunov", parents=[common], help="estimate the largest Lyapunov exponent")
    sub.add_parser("select", parents=[common], help="rerun decision-aligned selection on a run directory")
    sub.add_parser("sweep", parents=[common], help="run the pipeline over a list of forcing values")
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    # the config decides the output directory, and with it where the log goes
    cfg, config_error = None, None
    if args.command != "report":
        try:
            if not args.config:
                raise ConfigError(f"'{args.command}' needs --config")
            cfg = ExperimentConfig.from_file(args.config).with_overrides(
                seed=args.seed, out=args.out, grid=args.grid, threads=args.threads,
            )
        except ChaosRashomonError as e:
            config_error = e
    out_dir = args.out or (cfg.output_dir if cfg is not None else config.OUTPUT_DIR)

    os.makedirs(out_dir, exist_ok=True)
    setup_logging(log_file=os.path.join(out_dir, os.path.basename(config.LOG_FILE)))
    logger = logging.getLogger(__name__)
    if config_error is not None:
        logger.error("%s", config_error)
        return config_error.exit_code
    logger.info("Command '%s' (output %s)", args.command, out_dir)

    try:
        if args.command == "report":
            cmd_report(out_dir)
        else:
            COMMANDS[args.command](cfg)
    except ChaosRashomonError as e:
        logger.error("%s", e)
        return e.exit_code
    except OSError as e:
        logger.error("Filesystem error: %s", e)
        return 3
    logger.info("Command '%s' finished", args.command)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == '__main__':
    main()
