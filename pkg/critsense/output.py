"""
Sweep records and their CSV / JSON serialization.

Floats are written with 17 significant digits so that a parse of the
emitted file reproduces every value bit for bit. JSON has no non-finite
numbers: they are written as null and read back as inf in `eta` (the
η → ∞ limit) and as nan in every other column.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Iterable, Sequence

from .errors import OutputError


@dataclass(frozen=True)
class SweepRecord:
    protocol: str
    model: str
    g_or_lambda: float
    delta: float
    eta: float
    time: float
    n: int
    mean: float = math.nan
    variance: float = math.nan
    chi: float = math.nan
    inv_var: float = math.nan
    qfi_analytic: float = math.nan
    qfi_generator: float = math.nan
    qfi_exact: float = math.nan
    closed_form: float = math.nan
    ratio: float = math.nan
    cutoff: int = 0
    converged: bool = False
    error: str = ""


COLUMNS = tuple(f.name for f in fields(SweepRecord))
_INT_COLUMNS = {"n", "cutoff"}
_STR_COLUMNS = {"protocol", "model", "error"}
_FLOAT_COLUMNS = tuple(c for c in COLUMNS if c not in _INT_COLUMNS | _STR_COLUMNS | {"converged"})


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _parse_value(column: str, text: str) -> Any:
    if column in _STR_COLUMNS:
        return text
    if column == "converged":
        return text == "true"
    if column in _INT_COLUMNS:
        return int(text)
    return float(text)


def records_to_csv(records: Iterable[SweepRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for rec in records:
        writer.writerow([_format_value(getattr(rec, c)) for c in COLUMNS])
    return buf.getvalue()


def records_to_json(records: Iterable[SweepRecord]) -> str:
    return json.dumps([_jsonable(asdict(r)) for r in records], indent=2, allow_nan=False) + "\n"


def _record_from_json(item: dict[str, Any]) -> SweepRecord:
    values = dict(item)
    for column in _FLOAT_COLUMNS:
        if values.get(column, 0.0) is None:
            values[column] = math.inf if column == "eta" else math.nan
    return SweepRecord(**values)


def emit(records: Sequence[SweepRecord], fmt: str, path: str | Path) -> None:
    """Write records as csv or json to `path`, or to standard output for "-"."""
    if fmt == "csv":
        text = records_to_csv(records)
    elif fmt == "json":
        text = records_to_json(records)
    else:
        raise OutputError(f"unknown output format {fmt!r}")
    if str(path) == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write {target}: {exc}") from exc


def parse_records(text: str, fmt: str) -> list[SweepRecord]:
    if fmt == "json":
        return [_record_from_json(item) for item in json.loads(text)]
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return []
    header = tuple(rows[0])
    if header != COLUMNS:
        raise OutputError(f"unexpected CSV header: {header}")
    return [
        SweepRecord(**{c: _parse_value(c, v) for c, v in zip(COLUMNS, row)})
        for row in rows[1:]
    ]


def read_records(path: str | Path, fmt: str | None = None) -> list[SweepRecord]:
    target = Path(path)
    kind = fmt or ("json" if target.suffix == ".json" else "csv")
    try:
        text = target.read_text(encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot read {target}: {exc}") from exc
    return parse_records(text, kind)


def summary_path(path: str | Path) -> Path | None:
    if str(path) == "-":
        return None
    return Path(f"{path}.summary.json")


def _jsonable(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def write_summary(path: str | Path, summary: dict[str, Any]) -> Path | None:
    target = summary_path(path)
    if target is None:
        return None
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(_jsonable(summary), indent=2), encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write {target}: {exc}") from exc
    return target
