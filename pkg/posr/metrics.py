"""
Closed-set accuracy, open-set AUROC and per-method aggregation.

Aggregates are reported two ways: pooled over every fold of every run (the
headline "MM.MM (±SS.SS)" string) and over runs, where each run contributes
the mean of its folds.
"""

import csv
import io
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from pydantic import ValidationError
from sklearn.metrics import roc_auc_score

from posr.models import MethodAggregate, MetricsRecord

logger = logging.getLogger(__name__)

METRICS_HEADER = ["run_id", "fold", "target_subject", "method", "accuracy", "ossr_auroc", "seed", "epochs"]
AGGREGATE_HEADER = ["method", "n_folds", "n_runs", "mean", "std", "run_mean", "run_std", "mean_auroc", "single_record"]


class MetricsError(Exception):
    """Base exception for metric computation errors."""
    pass


class EmptyInputError(MetricsError):
    pass


class MetricsParseError(MetricsError):
    """Raised for malformed metrics CSV files; line_number is 1-based."""

    def __init__(self, message: str, line_number: int, source: str = "<metrics>"):
        super().__init__(f"{source}:{line_number}: {message}")
        self.line_number = line_number
        self.source = source


def accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    predictions = np.asarray(predictions).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if predictions.size == 0 or labels.size == 0:
        raise EmptyInputError("accuracy of an empty prediction set is undefined")
    if predictions.shape != labels.shape:
        raise MetricsError(f"{predictions.size} predictions for {labels.size} labels")
    return float(np.count_nonzero(predictions == labels)) / labels.size


def auroc(scores_known: Sequence[float], scores_unknown: Sequence[float]) -> float:
    """P(unknown scores higher than known) + 1/2 P(tie); higher score means more unknown."""
    known = np.asarray(scores_known, dtype=np.float64).reshape(-1)
    unknown = np.asarray(scores_unknown, dtype=np.float64).reshape(-1)
    if known.size == 0 or unknown.size == 0:
        raise EmptyInputError("AUROC needs at least one known and one unknown score")
    y_true = np.concatenate([np.zeros(known.size), np.ones(unknown.size)])
    y_score = np.concatenate([known, unknown])
    return float(roc_auc_score(y_true, y_score))


def _sample_std(values: Sequence[float]) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def aggregate_runs(records: Iterable[MetricsRecord]) -> Dict[str, MethodAggregate]:
    """
    Per-method accuracy mean and (n-1) standard deviation, methods in order of first appearance.

    Raises:
        EmptyInputError: no records
    """
    records = list(records)
    if not records:
        raise EmptyInputError("cannot aggregate zero records")

    by_method: Dict[str, List[MetricsRecord]] = {}
    for record in records:
        by_method.setdefault(record.method, []).append(record)

    aggregates: Dict[str, MethodAggregate] = {}
    for method, rows in by_method.items():
        accuracies = [r.accuracy for r in rows]
        by_run: Dict[int, List[float]] = {}
        for r in rows:
            by_run.setdefault(r.run_id, []).append(r.accuracy)
        run_means = [float(np.mean(v)) for v in by_run.values()]
        aurocs = [r.ossr_auroc for r in rows if r.ossr_auroc is not None]

        single = len(rows) == 1
        if single:
            logger.warning(f"⚠️ {method}: single record, std reported as 0.00")
        aggregates[method] = MethodAggregate(
            method=method,
            n_folds=len(rows),
            n_runs=len(by_run),
            mean=float(np.mean(accuracies)),
            std=_sample_std(accuracies),
            run_mean=float(np.mean(run_means)),
            run_std=_sample_std(run_means),
            mean_auroc=float(np.mean(aurocs)) if aurocs else None,
            single_record=single,
        )
    return aggregates


def format_aggregate_table(aggregates: Dict[str, MethodAggregate]) -> str:
    """Plain-text table, one line per method."""
    width = max([len("method")] + [len(m) for m in aggregates])
    lines = [f"{'method':<{width}}  {'accuracy (%)':<16}  {'over runs (%)':<16}  {'folds':>5}  {'runs':>4}  ossr_auroc"]
    for method, agg in aggregates.items():
        auroc_text = f"{agg.mean_auroc:.4f}" if agg.mean_auroc is not None else "-"
        flag = "  (single record)" if agg.single_record else ""
        lines.append(
            f"{method:<{width}}  {agg.formatted:<16}  {agg.formatted_runs:<16}  "
            f"{agg.n_folds:>5}  {agg.n_runs:>4}  {auroc_text}{flag}"
        )
    return "\n".join(lines)


def comparison_line(aggregates: Dict[str, MethodAggregate], method: str, baseline: str) -> Optional[str]:
    """Informational "method vs baseline" line, or None when either is missing."""
    if method not in aggregates or baseline not in aggregates:
        return None
    a, b = aggregates[method], aggregates[baseline]
    delta = (a.mean - b.mean) * 100
    return f"{method} {a.formatted} vs {baseline} {b.formatted} ({delta:+.2f} points)"


def _format_row(record: MetricsRecord) -> List[str]:
    return [
        str(record.run_id),
        str(record.fold),
        str(record.target_subject),
        record.method,
        repr(float(record.accuracy)),
        "" if record.ossr_auroc is None else repr(float(record.ossr_auroc)),
        str(record.seed),
        str(record.epochs),
    ]


def render_metrics_csv(records: Iterable[MetricsRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for record in records:
        writer.writerow(_format_row(record))
    return buf.getvalue()


def write_metrics_csv(records: Iterable[MetricsRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_metrics_csv(records), encoding="utf-8", newline="\n")
    return path


def read_metrics_csv(path: Union[str, Path]) -> List[MetricsRecord]:
    """
    Parse a metrics CSV written by write_metrics_csv.

    Raises:
        MetricsParseError: bad header, wrong field count or invalid values
    """
    path = Path(path)
    source = str(path)
    text = path.read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise MetricsParseError("empty file, expected a header", 1, source)
    if rows[0] != METRICS_HEADER:
        raise MetricsParseError(f"expected header {','.join(METRICS_HEADER)}", 1, source)

    records: List[MetricsRecord] = []
    for line_number, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(METRICS_HEADER):
            raise MetricsParseError(f"expected {len(METRICS_HEADER)} fields, got {len(row)}", line_number, source)
        values = dict(zip(METRICS_HEADER, row))
        if values["ossr_auroc"] == "":
            values["ossr_auroc"] = None
        try:
            records.append(MetricsRecord.model_validate(values))
        except ValidationError as e:
            fields = ", ".join(str(err["loc"][0]) for err in e.errors())
            raise MetricsParseError(f"invalid value for {fields}", line_number, source)
    return records


def write_aggregate_csv(aggregates: Dict[str, MethodAggregate], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(AGGREGATE_HEADER + ["formatted"])
    for agg in aggregates.values():
        writer.writerow([
            agg.method, agg.n_folds, agg.n_runs,
            repr(agg.mean), repr(agg.std), repr(agg.run_mean), repr(agg.run_std),
            "" if agg.mean_auroc is None else repr(agg.mean_auroc),
            "true" if agg.single_record else "false",
            agg.formatted,
        ])
    path.write_text(buf.getvalue(), encoding="utf-8", newline="\n")
    return path
