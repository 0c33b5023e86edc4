"""
Metrics CSV writing, reading and run comparison
"""
import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import config
from core.errors import CsvFormatError, ValidationError
from core.federation import RoundMetrics

logger = logging.getLogger(__name__)

BASE_COLUMNS = ["round", "mean_accuracy", "mean_local_loss", "mean_in_loss", "elapsed_seconds"]


def csv_header(num_clients: int) -> List[str]:
    return BASE_COLUMNS + [f"acc_c{k}" for k in range(num_clients)]


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return ""
    if math.isnan(value):
        return "nan"
    return f"{value:.6f}"


class MetricsWriter:
    """Appends one row per round and flushes, so a partial CSV is always valid"""

    def __init__(self, path, num_clients: int, wallclock: bool = config.CSV_WALLCLOCK):
        self.path = Path(path)
        self.num_clients = num_clients
        self.wallclock = wallclock
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._file, lineterminator="\n")
        self._writer.writerow(csv_header(num_clients))
        self._file.flush()

    def write(self, metrics: RoundMetrics):
        if len(metrics.per_client_accuracy) != self.num_clients:
            raise ValidationError(
                f"round {metrics.round} has {len(metrics.per_client_accuracy)} accuracies, "
                f"expected {self.num_clients}")
        elapsed = metrics.elapsed_seconds if self.wallclock else 0.0
        self._writer.writerow(
            [str(metrics.round), _fmt(metrics.mean_accuracy), _fmt(metrics.mean_local_loss),
             _fmt(metrics.mean_in_loss), _fmt(elapsed)]
            + [_fmt(a) for a in metrics.per_client_accuracy])
        self._file.flush()

    def close(self):
        if not self._file.closed:
            self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


@dataclass
class MetricsRow:
    round: int
    mean_accuracy: float
    mean_local_loss: float
    mean_in_loss: Optional[float]
    elapsed_seconds: float
    per_client_accuracy: List[float]


def _parse_float(text: str, column: str, path: Path, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise CsvFormatError(f"column {column}: {text!r} is not a number", str(path), line)


def read_metrics_csv(path) -> List[MetricsRow]:
    """Parse a metrics CSV; any malformed line raises CsvFormatError naming it"""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        lines = list(csv.reader(f))
    if not lines:
        raise CsvFormatError("empty file, expected a header", str(path), 1)

    header = lines[0]
    if header[:len(BASE_COLUMNS)] != BASE_COLUMNS:
        raise CsvFormatError(f"header must start with {','.join(BASE_COLUMNS)}", str(path), 1)
    num_clients = len(header) - len(BASE_COLUMNS)
    if header != csv_header(num_clients):
        raise CsvFormatError("per-client columns must be acc_c0..acc_c{K-1}", str(path), 1)

    rows: List[MetricsRow] = []
    for line_number, fields in enumerate(lines[1:], start=2):
        if not fields:
            continue
        if len(fields) != len(header):
            raise CsvFormatError(f"expected {len(header)} fields, found {len(fields)}", str(path), line_number)
        try:
            round_num = int(fields[0])
        except ValueError:
            raise CsvFormatError(f"round {fields[0]!r} is not an integer", str(path), line_number)
        values = [_parse_float(text, column, path, line_number)
                  for column, text in zip(header[1:], fields[1:]) if column != "mean_in_loss"]
        rows.append(MetricsRow(
            round=round_num,
            mean_accuracy=values[0],
            mean_local_loss=values[1],
            mean_in_loss=_parse_float(fields[3], "mean_in_loss", path, line_number) if fields[3] else None,
            elapsed_seconds=values[2],
            per_client_accuracy=values[3:],
        ))
    return rows


@dataclass
class RoundDelta:
    round: int
    accuracy_a: float
    accuracy_b: float

    @property
    def delta(self) -> float:
        return self.accuracy_b - self.accuracy_a


@dataclass
class ComparisonReport:
    """Per-round accuracy deltas (b - a) and the tail summary"""
    deltas: List[RoundDelta]
    tail: int
    tail_mean_a: float
    tail_mean_b: float

    @property
    def tail_difference(self) -> float:
        return self.tail_mean_b - self.tail_mean_a

    @property
    def verdict(self) -> str:
        diff = self.tail_difference
        if diff > 0:
            return f"b ahead by {diff * 100:.2f} points over the last {self.tail} rounds"
        if diff < 0:
            return f"a ahead by {-diff * 100:.2f} points over the last {self.tail} rounds"
        return f"tie over the last {self.tail} rounds"

    def format_table(self) -> str:
        lines = [f"{'round':>5}  {'acc_a':>8}  {'acc_b':>8}  {'delta':>9}"]
        for d in self.deltas:
            lines.append(f"{d.round:>5}  {d.accuracy_a:>8.4f}  {d.accuracy_b:>8.4f}  {d.delta:>+9.4f}")
        lines.append(f"mean of last {self.tail}: a={self.tail_mean_a:.4f} b={self.tail_mean_b:.4f} "
                     f"diff={self.tail_difference:+.4f}")
        lines.append(self.verdict)
        return "\n".join(lines)


def compare_runs(csv_a, csv_b, tail: int = config.COMPARE_TAIL_ROUNDS) -> ComparisonReport:
    """Compare two runs over the same rounds"""
    rows_a = read_metrics_csv(csv_a)
    rows_b = read_metrics_csv(csv_b)
    rounds_a = [r.round for r in rows_a]
    rounds_b = [r.round for r in rows_b]
    if rounds_a != rounds_b:
        raise ValidationError(
            f"round ranges differ: {csv_a} has {_describe(rounds_a)}, {csv_b} has {_describe(rounds_b)}")
    if not rows_a:
        raise ValidationError("no rounds to compare")

    deltas = [RoundDelta(a.round, a.mean_accuracy, b.mean_accuracy) for a, b in zip(rows_a, rows_b)]
    tail = max(1, min(tail, len(deltas)))
    window = deltas[-tail:]
    report = ComparisonReport(
        deltas=deltas,
        tail=tail,
        tail_mean_a=sum(d.accuracy_a for d in window) / tail,
        tail_mean_b=sum(d.accuracy_b for d in window) / tail,
    )
    logger.info(f"Compared {csv_a} and {csv_b}: {report.verdict}")
    return report


def _describe(rounds: List[int]) -> str:
    if not rounds:
        return "no rounds"
    return f"{len(rounds)} rounds ({rounds[0]}..{rounds[-1]})"
