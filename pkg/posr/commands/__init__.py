"""One module per CLI subcommand. Each cmd_* function returns a process exit code."""

from pathlib import Path

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3

CONFIG_ECHO = "config_echo.conf"
EPOCH_FILE = "epochs.eegb"
METRICS_FILE = "metrics.csv"
AGGREGATE_FILE = "aggregate.csv"
FAILURES_FILE = "failures.csv"


def ensure_out_dir(out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


# Headline comparison printed by loso and report
BASELINE_METHOD = "CE_clf"
HEADLINE_METHOD = "GCPL_clf+GCPL_ossr"
