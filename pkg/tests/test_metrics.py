import csv
import json

import pytest

from fedcl.metrics import COLUMNS, MetricsRow, emit_metrics, read_metrics


def rows(n=3):
    return [MetricsRow(i + 1, 1, "fedcl", 0.1 * (i + 1), 2.0 / (i + 1), None if i == 0 else 0.5 + i, i, None, 7)
            for i in range(n)]


def test_empty_history_is_header_only(tmp_path):
    emit_metrics([], tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_bytes() == (",".join(COLUMNS) + "\r\n").encode()


def test_three_rows_round_trip_through_csv_module(tmp_path):
    original = rows()
    emit_metrics(original, tmp_path / "m.csv")
    raw = (tmp_path / "m.csv").read_bytes()
    assert raw.count(b"\r\n") == 4
    with open(tmp_path / "m.csv", newline="") as fh:
        parsed = list(csv.reader(fh))
    assert parsed[0] == list(COLUMNS) and len(parsed) == 4
    for row, rec in zip(original, parsed[1:]):
        assert int(rec[0]) == row.round
        assert float(rec[3]) == row.test_accuracy
        assert 0.0 <= float(rec[3]) <= 1.0
        assert (rec[5] == "") == (row.generator_loss is None)
    assert read_metrics(tmp_path / "m.csv") == original


def test_jsonl_mirror(tmp_path):
    emit_metrics(rows(), tmp_path / "m.csv", tmp_path / "m.jsonl")
    recs = [json.loads(line) for line in (tmp_path / "m.jsonl").read_text().splitlines()]
    assert len(recs) == 3 and list(recs[0]) == list(COLUMNS)
    assert recs[0]["generator_loss"] is None and recs[2]["test_accuracy"] == rows()[2].test_accuracy


def test_row_validation_and_order(tmp_path):
    with pytest.raises(ValueError):
        MetricsRow(1, 0, "fedavg", 1.5, 0.0, None, 0, None, 0)
    with pytest.raises(ValueError):
        emit_metrics(list(reversed(rows())), tmp_path / "m.csv")


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        emit_metrics(rows(), tmp_path / "missing-dir" / "m.csv")
