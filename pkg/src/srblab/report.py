"""Inequality reports and their CSV/JSON/SVG artifacts."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import InputError  # noqa: E402

logger = logging.getLogger(__name__)

ROW_COLUMNS = ("statement", "case", "lhs", "rhs", "slack", "pass", "vacuous", "note")

plt.rcParams["svg.hashsalt"] = "srblab"
plt.rcParams["svg.fonttype"] = "path"


def format_float(value: Any) -> str:
    """Fixed textual form for floats so artifacts are byte-stable across runs."""
    if isinstance(value, bool) or not isinstance(value, float):
        return str(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.12g}"


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "item") and callable(value.item) and getattr(value, "ndim", 1) == 0:
        value = value.item()
    if isinstance(value, float):
        return float(format_float(value)) if math.isfinite(value) else format_float(value)
    return value


@dataclass(frozen=True)
class BoundRow:
    """One checked inequality lhs <= rhs + slack; vacuous rows count as passing."""

    statement: str
    case: str
    lhs: float
    rhs: float
    slack: float = 0.0
    vacuous: bool = False
    note: str = ""

    @property
    def passed(self) -> bool:
        if self.vacuous:
            return True
        if math.isnan(self.lhs) or math.isnan(self.rhs):
            return False
        return self.lhs <= self.rhs + self.slack

    def as_record(self) -> Dict[str, Any]:
        return {
            "statement": self.statement,
            "case": self.case,
            "lhs": float(self.lhs),
            "rhs": float(self.rhs),
            "slack": float(self.slack),
            "pass": self.passed,
            "vacuous": self.vacuous,
            "note": self.note,
        }


@dataclass
class Report:
    title: str
    metadata: Dict[str, Any] = field(default_factory=dict)
    rows: List[BoundRow] = field(default_factory=list)
    fitted: Dict[str, float] = field(default_factory=dict)
    values: Dict[str, Any] = field(default_factory=dict)
    tables: Dict[str, List[Dict[str, Any]]] = field(default_factory=dict)

    def add(
        self,
        statement: str,
        case: str,
        lhs: float,
        rhs: float,
        slack: float = 0.0,
        vacuous: bool = False,
        note: str = "",
    ) -> BoundRow:
        row = BoundRow(statement, case, float(lhs), float(rhs), float(slack), vacuous, note)
        self.rows.append(row)
        if not row.passed:
            logger.warning(f"{self.title}: {statement} [{case}] failed: {lhs:.6g} > {rhs:.6g}")
        return row

    def add_between(
        self, statement: str, case: str, low: float, value: float, high: float, slack: float = 0.0
    ) -> None:
        """Two rows for low <= value <= high."""
        self.add(f"{statement}.lower", case, low, value, slack)
        self.add(f"{statement}.upper", case, value, high, slack)

    def extend(self, rows: Iterable[BoundRow]) -> None:
        self.rows.extend(rows)

    @property
    def failures(self) -> List[BoundRow]:
        return [row for row in self.rows if not row.passed]

    @property
    def vacuous_count(self) -> int:
        return sum(1 for row in self.rows if row.vacuous)

    def to_dict(self) -> Dict[str, Any]:
        return _jsonable(
            {
                "title": self.title,
                "metadata": self.metadata,
                "rows": [row.as_record() for row in self.rows],
                "fitted": self.fitted,
                "values": self.values,
                "tables": self.tables,
                "summary": {
                    "rows": len(self.rows),
                    "failures": len(self.failures),
                    "vacuous": self.vacuous_count,
                },
            }
        )


def report_to_csv(report: Report) -> str:
    buffer = io.StringIO()
    buffer.write(f"# title={report.title}\n")
    for key in sorted(report.metadata):
        buffer.write(f"# {key}={format_float(report.metadata[key])}\n")
    for key in sorted(report.fitted):
        buffer.write(f"# fitted.{key}={format_float(float(report.fitted[key]))}\n")
    for key in sorted(report.values):
        value = report.values[key]
        if isinstance(value, (int, float, str, bool)):
            buffer.write(f"# value.{key}={format_float(value)}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(ROW_COLUMNS)
    for row in report.rows:
        record = row.as_record()
        writer.writerow([format_float(record[c]) for c in ROW_COLUMNS])
    return buffer.getvalue()


def table_to_csv(records: Sequence[Dict[str, Any]], metadata: Optional[Dict[str, Any]] = None) -> str:
    buffer = io.StringIO()
    for key in sorted(metadata or {}):
        buffer.write(f"# {key}={format_float((metadata or {})[key])}\n")
    if records:
        columns = list(records[0].keys())
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(columns)
        for record in records:
            writer.writerow([format_float(record.get(c)) for c in columns])
    return buffer.getvalue()


def report_to_json(report: Report) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"


def write_report(report: Report, out_dir: str, stem: str, fmt: str = "both") -> List[str]:
    """Write ``<stem>.csv`` and/or ``<stem>.json`` (plus one CSV per extra table)."""
    if fmt not in ("csv", "json", "both"):
        raise InputError(f"Unknown output format '{fmt}'")
    os.makedirs(out_dir, exist_ok=True)
    written: List[str] = []
    if fmt in ("csv", "both"):
        path = os.path.join(out_dir, f"{stem}.csv")
        with open(path, "w", newline="") as f:
            f.write(report_to_csv(report))
        written.append(path)
        for name in sorted(report.tables):
            table_path = os.path.join(out_dir, f"{stem}.{name}.csv")
            with open(table_path, "w", newline="") as f:
                f.write(table_to_csv(report.tables[name], report.metadata))
            written.append(table_path)
    if fmt in ("json", "both"):
        path = os.path.join(out_dir, f"{stem}.json")
        with open(path, "w") as f:
            f.write(report_to_json(report))
        written.append(path)
    logger.info(f"Wrote {len(written)} artifact(s) for {stem} to {out_dir}")
    return written


Series = Tuple[str, Sequence[float], Sequence[float]]


def plot_series(
    path: str,
    series: Sequence[Series],
    title: str,
    xlabel: str,
    ylabel: str,
    steps: Sequence[str] = (),
) -> str:
    """Self-contained SVG line plot; labels listed in ``steps`` are drawn as step histograms."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, x, y in series:
        if label in steps:
            ax.step(x, y, where="mid", label=label)
        else:
            ax.plot(x, y, label=label)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
