"""
Tests for accuracy, AUROC, aggregation and the metrics CSV format.
"""
import numpy as np
import pytest

from posr.metrics import (
    METRICS_HEADER,
    EmptyInputError,
    MetricsError,
    MetricsParseError,
    accuracy,
    aggregate_runs,
    auroc,
    comparison_line,
    format_aggregate_table,
    read_metrics_csv,
    render_metrics_csv,
    write_aggregate_csv,
    write_metrics_csv,
)
from posr.models import MetricsRecord
from tests.test_helpers import ref_auroc


def record(acc, method="GCPL_clf+GCPL_ossr", run_id=0, fold=0, auroc_value=None):
    return MetricsRecord(
        run_id=run_id,
        fold=fold,
        target_subject=fold,
        method=method,
        accuracy=acc,
        ossr_auroc=auroc_value,
        seed=run_id,
        epochs=10,
    )


class TestAccuracy:
    def test_fraction_correct(self):
        assert accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75

    def test_constant_predictor_on_balanced_set(self):
        labels = np.arange(20) % 2
        assert accuracy(np.zeros(20, dtype=int), labels) == 0.5

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            accuracy([], [])

    def test_length_mismatch(self):
        with pytest.raises(MetricsError):
            accuracy([0, 1], [0, 1, 1])


class TestAuroc:
    """Rank AUROC where a higher score means more likely unknown."""

    def test_perfect_separation(self):
        assert auroc([0.1, 0.2], [0.8, 0.9]) == 1.0

    def test_inverted_separation(self):
        assert auroc([0.8, 0.9], [0.1, 0.2]) == 0.0

    def test_all_ties_is_half(self):
        assert auroc([1.0, 1.0], [1.0, 1.0, 1.0]) == 0.5

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_pairwise_count(self, seed):
        rng = np.random.default_rng(seed)
        known = rng.integers(0, 5, size=12).astype(float)
        unknown = rng.integers(2, 7, size=9).astype(float)
        assert auroc(known, unknown) == pytest.approx(ref_auroc(known, unknown), abs=1e-12)

    def test_invariant_to_increasing_transform(self):
        rng = np.random.default_rng(1)
        known, unknown = rng.normal(size=15), rng.normal(0.5, 1.0, size=10)
        assert auroc(np.exp(known), np.exp(unknown)) == pytest.approx(auroc(known, unknown))

    def test_empty_side(self):
        with pytest.raises(EmptyInputError):
            auroc([], [0.5])


class TestAggregateRuns:
    """Per-method mean and sample standard deviation."""

    def test_two_folds(self):
        aggs = aggregate_runs([record(0.7, fold=0), record(0.9, fold=1)])
        assert aggs["GCPL_clf+GCPL_ossr"].formatted == "80.00 (±14.14)"

    def test_identical_accuracies(self):
        aggs = aggregate_runs([record(0.8, fold=0), record(0.8, fold=1)])
        assert aggs["GCPL_clf+GCPL_ossr"].formatted == "80.00 (±0.00)"

    def test_single_record_is_flagged(self):
        agg = aggregate_runs([record(0.6)])["GCPL_clf+GCPL_ossr"]
        assert agg.single_record
        assert agg.formatted == "60.00 (±0.00)"

    def test_methods_keep_first_appearance_order(self):
        aggs = aggregate_runs([record(0.5, method="CE_clf"), record(0.6), record(0.7, method="CE_clf", fold=1)])
        assert list(aggs) == ["CE_clf", "GCPL_clf+GCPL_ossr"]
        assert aggs["CE_clf"].n_folds == 2

    def test_run_level_statistics(self):
        # Arrange: run 0 folds average 0.6, run 1 folds average 0.8
        records = [
            record(0.5, run_id=0, fold=0), record(0.7, run_id=0, fold=1),
            record(0.8, run_id=1, fold=0), record(0.8, run_id=1, fold=1),
        ]

        # Act
        agg = aggregate_runs(records)["GCPL_clf+GCPL_ossr"]

        # Assert
        assert agg.n_runs == 2
        assert agg.run_mean == pytest.approx(0.7)
        assert agg.run_std == pytest.approx(np.std([0.6, 0.8], ddof=1))
        assert agg.formatted_runs == "70.00 (±14.14)"

    def test_mean_within_range(self):
        rng = np.random.default_rng(3)
        accs = rng.uniform(size=9)
        agg = aggregate_runs([record(a, fold=i) for i, a in enumerate(accs)])["GCPL_clf+GCPL_ossr"]
        assert accs.min() <= agg.mean <= accs.max()

    def test_mean_auroc_skips_missing(self):
        agg = aggregate_runs([record(0.5, auroc_value=0.6), record(0.5, fold=1), record(0.5, fold=2, auroc_value=0.8)])
        assert agg["GCPL_clf+GCPL_ossr"].mean_auroc == pytest.approx(0.7)

    def test_no_records(self):
        with pytest.raises(EmptyInputError):
            aggregate_runs([])

    def test_table_lists_every_method(self):
        text = format_aggregate_table(aggregate_runs([record(0.7), record(0.9, method="CE_clf")]))
        assert "CE_clf" in text and "GCPL_clf+GCPL_ossr" in text
        assert "(single record)" in text


class TestComparisonLine:
    def test_delta_in_points(self):
        aggs = aggregate_runs([record(0.75), record(0.70, method="CE_clf")])
        line = comparison_line(aggs, "GCPL_clf+GCPL_ossr", "CE_clf")
        assert line == "GCPL_clf+GCPL_ossr 75.00 (±0.00) vs CE_clf 70.00 (±0.00) (+5.00 points)"

    def test_missing_baseline(self):
        assert comparison_line(aggregate_runs([record(0.75)]), "GCPL_clf+GCPL_ossr", "CE_clf") is None


class TestMetricsCsv:
    """Writing and parsing per-fold rows."""

    def test_header_and_line_endings(self):
        text = render_metrics_csv([record(0.5)])
        assert text.splitlines()[0] == ",".join(METRICS_HEADER)
        assert "\r" not in text

    def test_round_trip(self, tmp_path):
        records = [record(0.123456789, auroc_value=0.75), record(1 / 3, fold=1, method="CE_clf")]
        path = write_metrics_csv(records, tmp_path / "out" / "metrics.csv")
        assert read_metrics_csv(path) == records

    def test_blank_auroc_reads_as_none(self, tmp_path):
        path = write_metrics_csv([record(0.5)], tmp_path / "m.csv")
        assert read_metrics_csv(path)[0].ossr_auroc is None

    def test_bad_header(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("run,fold\n0,0\n")
        with pytest.raises(MetricsParseError) as excinfo:
            read_metrics_csv(path)
        assert excinfo.value.line_number == 1

    def test_wrong_field_count_names_line(self, tmp_path):
        path = write_metrics_csv([record(0.5), record(0.6, fold=1)], tmp_path / "m.csv")
        path.write_text(path.read_text() + "0,2,2,CE_clf,0.5\n")
        with pytest.raises(MetricsParseError) as excinfo:
            read_metrics_csv(path)
        assert excinfo.value.line_number == 4
        assert "m.csv:4" in str(excinfo.value)

    def test_out_of_range_accuracy(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text(",".join(METRICS_HEADER) + "\n0,0,0,CE_clf,1.5,,0,10\n")
        with pytest.raises(MetricsParseError) as excinfo:
            read_metrics_csv(path)
        assert excinfo.value.line_number == 2

    def test_aggregate_csv(self, tmp_path):
        path = write_aggregate_csv(aggregate_runs([record(0.7), record(0.9, fold=1)]), tmp_path / "aggregate.csv")
        lines = path.read_text().splitlines()
        assert lines[0].endswith(",formatted")
        assert lines[1].startswith("GCPL_clf+GCPL_ossr,2,1,")
        assert lines[1].endswith("80.00 (±14.14)")
