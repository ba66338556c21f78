"""Per-round metrics rows and their CSV / JSON-lines emission.

Floats are written with ``repr`` so a CSV round-trips exactly. Wall-clock time
is the one nondeterministic column; it is left empty unless explicitly
requested, which keeps same-seed runs byte-identical.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Optional

COLUMNS = ("round", "training_state_index", "algorithm", "test_accuracy", "mean_client_loss",
           "generator_loss", "frozen_count", "wall_seconds", "seed")


@dataclass(frozen=True)
class MetricsRow:
    round: int
    training_state_index: int
    algorithm: str
    test_accuracy: float
    mean_client_loss: float
    generator_loss: Optional[float]
    frozen_count: int
    wall_seconds: Optional[float]
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.test_accuracy <= 1.0:
            raise ValueError(f"accuracy {self.test_accuracy} outside [0, 1]")

    @classmethod
    def from_round(cls, m, wall_clock=False) -> "MetricsRow":
        """Build from a federation ``RoundMetrics``."""
        return cls(m.round, m.state_index, m.algorithm, m.test_accuracy, m.mean_client_loss,
                   m.generator_loss, m.frozen_count, m.wall_seconds if wall_clock else None, m.seed)


assert tuple(f.name for f in fields(MetricsRow)) == COLUMNS


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_from_history(history: Iterable, wall_clock=False) -> list:
    return [h if isinstance(h, MetricsRow) else MetricsRow.from_round(h, wall_clock) for h in history]


def _check_order(rows):
    for a, b in zip(rows, rows[1:]):
        if b.round < a.round:
            raise ValueError("metrics rows must have nondecreasing round numbers")


def metrics_csv(history: Iterable, wall_clock=False) -> str:
    rows = rows_from_history(history, wall_clock)
    _check_order(rows)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow([_cell(getattr(row, c)) for c in COLUMNS])
    return buf.getvalue()


def emit_metrics(history: Iterable, out_path, jsonl_path=None, wall_clock=False):
    """Write the CSV (RFC 4180, CRLF line ends) and optionally a JSON-lines mirror."""
    rows = rows_from_history(history, wall_clock)
    text = metrics_csv(rows)
    Path(out_path).write_bytes(text.encode("utf-8"))
    if jsonl_path is not None:
        lines = [json.dumps({c: getattr(r, c) for c in COLUMNS}) for r in rows]
        Path(jsonl_path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return rows


def _optional(s):
    return float(s) if s != "" else None


def read_metrics(path) -> list:
    """Parse a metrics CSV back into rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        out = []
        for rec in reader:
            out.append(MetricsRow(int(rec["round"]), int(rec["training_state_index"]), rec["algorithm"],
                                  float(rec["test_accuracy"]), float(rec["mean_client_loss"]),
                                  _optional(rec["generator_loss"]), int(rec["frozen_count"]),
                                  _optional(rec["wall_seconds"]), int(rec["seed"])))
        return out
