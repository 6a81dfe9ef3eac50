import csv
import logging
from pathlib import Path
from typing import Optional

from posr.commands import (
    AGGREGATE_FILE, BASELINE_METHOD, CONFIG_ECHO, EXIT_OK, EXIT_PARTIAL, EXIT_RUNTIME,
    FAILURES_FILE, HEADLINE_METHOD, METRICS_FILE, ensure_out_dir,
)
from posr.config import settings, write_config_echo
from posr.metrics import comparison_line, format_aggregate_table, write_aggregate_csv, write_metrics_csv
from posr.models import RunConfig
from posr.repositories import get_epoch_repository
from posr.services.benchmark import BenchmarkResult, LOSOBenchmark

logger = logging.getLogger(__name__)


def resolve_parallel(config: RunConfig, parallel: Optional[int]) -> int:
    """--parallel, then loso.parallel, then POSR_THREADS."""
    if parallel is not None and parallel > 0:
        return parallel
    if config.loso.parallel > 0:
        return config.loso.parallel
    return settings.threads


def _write_failures(result: BenchmarkResult, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["run_id", "fold", "target_subject", "method", "error_type", "error"])
        for failure in result.failures:
            writer.writerow([failure.run_id, failure.fold, failure.target_subject, failure.method,
                             failure.error_type, failure.error])


def cmd_loso(config: RunConfig, out_dir: Path, parallel: Optional[int] = None) -> int:
    """Run every fold of every method; prints the aggregate table and the headline comparison."""
    out_dir = ensure_out_dir(out_dir)
    write_config_echo(config, out_dir / CONFIG_ECHO)
    repository = get_epoch_repository(config.data, config.synth)
    result = LOSOBenchmark(config, repository, out_dir=out_dir).run(resolve_parallel(config, parallel))

    write_metrics_csv(result.records, out_dir / METRICS_FILE)
    if result.failures:
        _write_failures(result, out_dir / FAILURES_FILE)
    if not result.records:
        logger.error("❌ Every fold failed")
        return EXIT_RUNTIME

    write_aggregate_csv(result.aggregates, out_dir / AGGREGATE_FILE)
    print(format_aggregate_table(result.aggregates))
    comparison = comparison_line(result.aggregates, HEADLINE_METHOD, BASELINE_METHOD)
    if comparison is not None:
        print(comparison)

    if result.partial:
        logger.warning(f"⚠️ {len(result.failures)} fold(s) failed, see {out_dir / FAILURES_FILE}")
        return EXIT_PARTIAL
    return EXIT_OK
