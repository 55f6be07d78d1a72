"""
Main entry point for the layered transmission solver.
Parses the command line, configures logging and dispatches to a command.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from config import RunConfig, config, load_run_config
from commands import COMMANDS, RunContext
from errors import ConfigError, TransmissionError

logger = logging.getLogger(__name__)


def setup_logging() -> None:
    """Configure the root logger once: log file plus the diagnostic stream."""
    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVEL.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(config.LOG_FILE),
            logging.StreamHandler(sys.stderr)
        ]
    )


class CommandLineParser(argparse.ArgumentParser):
    """Argument parser whose usage errors are configuration errors (exit 4)."""

    def error(self, message: str):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = CommandLineParser(
        prog="transmission",
        description="Two-layer transmission solver on deflected MEMS geometries.",
    )
    parser.add_argument(
        "command",
        choices=list(COMMANDS),
        help="; ".join(f"{c.name}: {c.description}" for c in COMMANDS.values()),
    )
    parser.add_argument("--config", type=Path, default=None, help="TOML run configuration")
    parser.add_argument("--out", type=Path, default=None, help="output directory (overrides [output].directory)")
    parser.add_argument("--threads", type=int, default=config.DEFAULT_THREADS, help="worker threads for studies")
    parser.add_argument(
        "--seed",
        type=int,
        default=0,
        help="reserved: accepted for interface stability, nothing in the solver is random so it has no effect",
    )
    return parser


def run(command: str, run_config: RunConfig, out_dir: Optional[Path] = None, threads: int = 1, seed: int = 0) -> int:
    """
    Run one command on a validated configuration.

    Args:
        command: Registered command name
        run_config: Validated run configuration
        out_dir: Output directory; [output].directory if omitted
        threads: Worker threads for independent solves
        seed: Reserved; a non-zero value only draws a warning

    Returns:
        Process exit code
    """
    if command not in COMMANDS:
        raise KeyError(f"unknown command {command!r}")
    if threads < 1:
        threads = 1
    context = RunContext(
        out_dir=Path(run_config.output.directory) if out_dir is None else Path(out_dir),
        threads=threads,
    )
    if seed:
        logger.warning(f"--seed {seed} ignored: no stochastic components")
    logger.info(f"Running {command} into {context.out_dir} with {threads} thread(s)")
    return COMMANDS[command].func(run_config, context)


def error_line(error: TransmissionError) -> str:
    """One machine-parsable line describing a failure."""
    reason = " ".join(str(error).split()).replace('"', "'")
    return f'error exit={error.exit_code} kind={type(error).__name__} reason="{reason}"'


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main application entry point."""
    setup_logging()

    try:
        args = build_parser().parse_args(argv)
        config.validate()
        run_config = RunConfig() if args.config is None else load_run_config(args.config)
        code = run(args.command, run_config, out_dir=args.out, threads=args.threads, seed=args.seed)
        if code != 0:
            sys.stderr.write(f'error exit={code} kind=InadmissibleProfileError reason="profile is inadmissible"\n')
        return code

    except TransmissionError as e:
        logger.error(f"{type(e).__name__}: {e}")
        sys.stderr.write(error_line(e) + "\n")
        return e.exit_code

    except Exception as e:
        logger.error(f"Fatal error: {e}", exc_info=True)
        sys.stderr.write(f'error exit=1 kind={type(e).__name__} reason="unexpected failure"\n')
        return 1


if __name__ == "__main__":
    sys.exit(main())
