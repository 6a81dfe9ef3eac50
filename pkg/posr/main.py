import logging
import os
import sys

# Configure logging FIRST, before importing any posr modules
logging.basicConfig(
    level=os.getenv("POSR_LOG_LEVEL", "INFO").upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler(sys.stdout)
    ]
)

import argparse
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from posr.binary import FormatError
from posr.commands import EXIT_RUNTIME, EXIT_VALIDATION
from posr.commands.gradcheck import cmd_gradcheck
from posr.commands.loso import cmd_loso
from posr.commands.report import cmd_report
from posr.commands.synth import cmd_synth
from posr.commands.train import cmd_train
from posr.config import ConfigError, load_run_config, settings
from posr.encoder import ConfigurationError, ModelError
from posr.epochs import DataError
from posr.losses import LossError
from posr.metrics import MetricsError, MetricsParseError
from posr.optim import OptimError
from posr.services.training import TrainingDivergedError, TrainingError
from posr.tensor import TensorError

logger = logging.getLogger(__name__)


class CLIParser(argparse.ArgumentParser):
    """Usage errors exit with the validation status instead of argparse's 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit seed")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = CLIParser(add_help=False)
    common.add_argument("--config", type=Path, help="run config (section.field = value)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--parallel", type=int, help="folds trained concurrently (default: POSR_THREADS)")
    common.add_argument("--seed", type=_u64, help="overrides train.seed and synth.seed")

    parser = CLIParser(prog="posr", description="Subject-independent EEG classification with open-set subject recognition")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("synth", parents=[common], help="generate a synthetic epoch file")
    commands.add_parser("train", parents=[common], help="train one LOSO fold")
    commands.add_parser("loso", parents=[common], help="run the full LOSO benchmark")
    commands.add_parser("gradcheck", parents=[common], help="finite-difference check of every loss")
    report = commands.add_parser("report", parents=[common], help="aggregate metrics CSV files")
    report.add_argument("metrics", nargs="+", type=Path, help="metrics CSV files")
    return parser


def run(args: argparse.Namespace) -> int:
    if args.command == "gradcheck":
        return cmd_gradcheck(seed=args.seed or 0)
    if args.command == "report":
        return cmd_report(args.metrics, args.out)

    overrides = {}
    if args.seed is not None:
        overrides["train.seed"] = args.seed
        overrides["synth.seed"] = args.seed
    if args.out is not None:
        overrides["output.dir"] = str(args.out)
    config = load_run_config(args.config, overrides)
    out_dir = Path(config.output.dir or settings.OUT_DIR)
    logger.info(f"🚀 posr {args.command} -> {out_dir}")

    if args.command == "synth":
        return cmd_synth(config, out_dir)
    if args.command == "train":
        return cmd_train(config, out_dir)
    return cmd_loso(config, out_dir, args.parallel)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (ValidationError, ConfigError, ConfigurationError, LossError, MetricsParseError) as e:
        logger.error(f"❌ Invalid input: {e}")
        return EXIT_VALIDATION
    except TrainingDivergedError as e:
        logger.error(f"❌ {e} (last finite state: {e.checkpoint_path})")
        return EXIT_RUNTIME
    except (FormatError, DataError, TrainingError, TensorError, ModelError, OptimError, MetricsError, OSError, ValueError) as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
