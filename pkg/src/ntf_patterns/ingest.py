"""Receipt logs and demographic rosters into tensors and tables.

Receipt CSV::

    user_id,date,item,price
    u001,2017-04-03,milk,198

Demographics CSV::

    user_id,gender,age_cohort,marital,child
    u001,Female,3,Married,Yes

Both are UTF-8, comma separated with double-quote escaping. Malformed rows
are skipped and reported with their line number; a wrong header is fatal.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .demographics import ATTRIBUTES, DemographicTable

__all__ = [
    "RECEIPT_HEADER",
    "DEMOGRAPHIC_HEADER",
    "SchemaError",
    "ConfigurationError",
    "ReceiptRecord",
    "RowError",
    "CalendarConfig",
    "IngestReport",
    "parse_receipts",
    "read_receipts",
    "build_tensor",
    "parse_demographics",
    "read_demographics",
]

RECEIPT_HEADER = ("user_id", "date", "item", "price")
DEMOGRAPHIC_HEADER = ("user_id", "gender", "age_cohort", "marital", "child")
WEEK_POLICIES = ("full", "partial")


class SchemaError(ValueError):
    """Input file does not follow the expected CSV layout."""


class ConfigurationError(ValueError):
    """Pipeline settings that cannot produce a usable tensor."""


@dataclass(frozen=True)
class ReceiptRecord:
    user_id: str
    date: dt.date
    item: str
    price: float | None = None


@dataclass(frozen=True)
class RowError:
    line: int
    message: str


def _rows(source: Iterable[str], header: tuple[str, ...]):
    reader = csv.reader(source)
    try:
        first = next(reader)
    except StopIteration:
        raise SchemaError(f"missing header row; expected {','.join(header)}") from None
    if first and first[0].startswith("﻿"):
        first[0] = first[0][1:]
    if tuple(c.strip() for c in first) != header:
        raise SchemaError(f"bad header {first!r}; expected {','.join(header)}")
    for row in reader:
        yield reader.line_num, row


def parse_receipts(source: Iterable[str]) -> tuple[list[ReceiptRecord], list[RowError]]:
    """Parse receipt rows from an iterable of text lines (e.g. an open file)."""
    records: list[ReceiptRecord] = []
    errors: list[RowError] = []
    for line, row in _rows(source, RECEIPT_HEADER):
        if not row:
            continue
        if len(row) != len(RECEIPT_HEADER):
            errors.append(RowError(line, f"expected {len(RECEIPT_HEADER)} fields, got {len(row)}"))
            continue
        user_id, date_s, item, price_s = (c.strip() for c in row)
        if not user_id:
            errors.append(RowError(line, "empty user_id"))
            continue
        try:
            date = dt.date.fromisoformat(date_s)
        except ValueError:
            errors.append(RowError(line, f"unparseable date {date_s!r}"))
            continue
        price = None
        if price_s:
            try:
                price = float(price_s)
            except ValueError:
                errors.append(RowError(line, f"unparseable price {price_s!r}"))
                continue
            if not math.isfinite(price) or price < 0:
                errors.append(RowError(line, f"invalid price {price_s!r}"))
                continue
        records.append(ReceiptRecord(user_id, date, item, price))
    return records, errors


def read_receipts(path: str | Path) -> tuple[list[ReceiptRecord], list[RowError]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_receipts(fh)


@dataclass
class CalendarConfig:
    """Observation window and week layout.

    ``week_start`` is a weekday number (Monday = 0). With the ``"full"``
    policy only weeks lying entirely inside ``[start, end]`` are kept; with
    ``"partial"`` the boundary weeks are kept too. ``start``/``end`` may be
    left unset, in which case :func:`build_tensor` takes them from the data.
    """

    start: dt.date | None = None
    end: dt.date | None = None
    week_start: int = 0
    policy: str = "full"

    def __post_init__(self) -> None:
        if isinstance(self.start, str):
            self.start = dt.date.fromisoformat(self.start)
        if isinstance(self.end, str):
            self.end = dt.date.fromisoformat(self.end)
        if self.start is not None and self.end is not None and self.start > self.end:
            raise ConfigurationError(f"window start {self.start} is after end {self.end}")
        if self.week_start not in range(7):
            raise ConfigurationError(f"week_start must be 0..6, got {self.week_start}")
        if self.policy not in WEEK_POLICIES:
            raise ConfigurationError(f"unknown week policy {self.policy!r}")

    def resolved(self, records: Iterable[ReceiptRecord]) -> "CalendarConfig":
        if self.start is not None and self.end is not None:
            return self
        dates = [r.date for r in records]
        if not dates:
            raise ConfigurationError("cannot infer the window from zero records")
        return CalendarConfig(self.start or min(dates), self.end or max(dates), self.week_start, self.policy)

    def first_week_start(self) -> dt.date:
        if self.start is None:
            raise ConfigurationError("window start is unset")
        if self.policy == "full":
            return self.start + dt.timedelta(days=(self.week_start - self.start.weekday()) % 7)
        return self.start - dt.timedelta(days=(self.start.weekday() - self.week_start) % 7)

    def n_weeks(self) -> int:
        if self.end is None:
            raise ConfigurationError("window end is unset")
        span = (self.end - self.first_week_start()).days + 1
        if span <= 0:
            return 0
        return span // 7 if self.policy == "full" else -(-span // 7)

    def week_starts(self) -> list[dt.date]:
        first = self.first_week_start()
        return [first + dt.timedelta(weeks=k) for k in range(self.n_weeks())]

    def locate(self, date: dt.date) -> tuple[int, int] | None:
        """``(day_of_week, week)`` indices of ``date``, or None if excluded."""
        if date < self.start or date > self.end:
            return None
        offset = (date - self.first_week_start()).days
        if offset < 0:
            return None
        week = offset // 7
        if week >= self.n_weeks():
            return None
        return offset % 7, week


@dataclass
class IngestReport:
    n_records: int = 0
    n_included: int = 0
    n_out_of_window: int = 0
    n_users: int = 0
    n_weeks: int = 0
    window: tuple[str, str] | None = None
    errors: list[RowError] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "n_included": self.n_included,
            "n_out_of_window": self.n_out_of_window,
            "n_users": self.n_users,
            "n_weeks": self.n_weeks,
            "window": list(self.window) if self.window else None,
            "n_errors": len(self.errors),
            "errors": [{"line": e.line, "message": e.message} for e in self.errors],
        }


def build_tensor(
    records: Iterable[ReceiptRecord], cal: CalendarConfig
) -> tuple[NDArray[np.float64], list[str], IngestReport]:
    """Count records per (user, day of week, week).

    Users get rows in order of first appearance among the included records.
    Records outside the included weeks are dropped and counted.
    """
    records = list(records)
    cal = cal.resolved(records)
    K = cal.n_weeks()
    if K == 0:
        raise ConfigurationError(f"no {cal.policy} weeks between {cal.start} and {cal.end}")
    users: dict[str, int] = {}
    cells: list[tuple[int, int, int]] = []
    dropped = 0
    for rec in records:
        loc = cal.locate(rec.date)
        if loc is None:
            dropped += 1
            continue
        i = users.setdefault(rec.user_id, len(users))
        cells.append((i, loc[0], loc[1]))
    if not users:
        raise ConfigurationError("no records fall inside the included weeks")
    t = np.zeros((len(users), 7, K))
    if cells:
        idx = np.asarray(cells)
        np.add.at(t, (idx[:, 0], idx[:, 1], idx[:, 2]), 1.0)
    report = IngestReport(
        n_records=len(records),
        n_included=len(cells),
        n_out_of_window=dropped,
        n_users=len(users),
        n_weeks=K,
        window=(cal.start.isoformat(), cal.end.isoformat()),
    )
    return t, list(users), report


def parse_demographics(source: Iterable[str]) -> tuple[DemographicTable, list[RowError]]:
    """Parse a demographic roster; rows with out-of-domain values or a repeated
    user id are rejected and reported."""
    rows: dict[str, dict[str, str]] = {}
    errors: list[RowError] = []
    attrs = DEMOGRAPHIC_HEADER[1:]
    for line, row in _rows(source, DEMOGRAPHIC_HEADER):
        if not row:
            continue
        if len(row) != len(DEMOGRAPHIC_HEADER):
            errors.append(RowError(line, f"expected {len(DEMOGRAPHIC_HEADER)} fields, got {len(row)}"))
            continue
        values = [c.strip() for c in row]
        user_id = values[0]
        if not user_id:
            errors.append(RowError(line, "empty user_id"))
            continue
        if user_id in rows:
            errors.append(RowError(line, f"duplicate user_id {user_id!r}"))
            continue
        bad = [(a, v) for a, v in zip(attrs, values[1:]) if v not in ATTRIBUTES[a]]
        if bad:
            a, v = bad[0]
            errors.append(RowError(line, f"{a}={v!r} not in {ATTRIBUTES[a]}"))
            continue
        rows[user_id] = dict(zip(attrs, values[1:]))
    return DemographicTable(rows), errors


def read_demographics(path: str | Path) -> tuple[DemographicTable, list[RowError]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_demographics(fh)
