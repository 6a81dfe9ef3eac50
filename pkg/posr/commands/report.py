import logging
from pathlib import Path
from typing import List, Optional, Sequence

from posr.commands import AGGREGATE_FILE, BASELINE_METHOD, EXIT_OK, HEADLINE_METHOD, ensure_out_dir
from posr.metrics import (
    EmptyInputError, aggregate_runs, comparison_line, format_aggregate_table, read_metrics_csv, write_aggregate_csv,
)
from posr.models import MetricsRecord

logger = logging.getLogger(__name__)


def cmd_report(paths: Sequence[Path], out_dir: Optional[Path] = None) -> int:
    """Merge metrics CSVs into one per-method aggregate table."""
    if not paths:
        raise EmptyInputError("report needs at least one metrics CSV")
    records: List[MetricsRecord] = []
    for path in paths:
        records.extend(read_metrics_csv(path))
    aggregates = aggregate_runs(records)

    print(format_aggregate_table(aggregates))
    comparison = comparison_line(aggregates, HEADLINE_METHOD, BASELINE_METHOD)
    if comparison is not None:
        print(comparison)
    if out_dir is not None:
        path = write_aggregate_csv(aggregates, ensure_out_dir(out_dir) / AGGREGATE_FILE)
        logger.info(f"💾 Wrote aggregate table to {path}")
    return EXIT_OK
