"""SCADA measurement / status-event parsing and operational filtering.

Event intervals are half-open ``[start, end)``.  A record that matches both
the event rule and the pre-outage rule is counted once, under the event rule.
"""

from __future__ import annotations

import csv
import errno
import enum
import json
from dataclasses import asdict, dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .errors import SchemaMismatch

PRE_OUTAGE_WINDOW = timedelta(days=7)


class Category(str, enum.Enum):
    STANDBY = "Standby"
    WARNING = "Warning"
    STOP = "Stop"
    FORCED_OUTAGE = "ForcedOutage"
    NORMAL = "Normal"
    OTHER = "Other"


EXCLUDED_CATEGORIES = frozenset({Category.STANDBY, Category.WARNING, Category.STOP})

# Kelmarsh (Senvion MM92) export column names.
KELMARSH_SCADA_SCHEMA = {
    "timestamp": "# Date and time",
    "wind_speed": "Wind speed (m/s)",
    "active_power": "Power (kW)",
}
KELMARSH_EVENT_SCHEMA = {
    "start": "Timestamp start",
    "end": "Timestamp end",
    "labels": ("Status", "IEC category"),
}
# Best guess at the Kelmarsh label set; "Forced outage" is the IEC
# availability category and is not otherwise defined by the source data.
KELMARSH_CATEGORY_MAP = {
    "Stop": Category.STOP,
    "Warning": Category.WARNING,
    "Standby": Category.STANDBY,
    "Technical Standby": Category.STANDBY,
    "Out of Environmental Specification": Category.STANDBY,
    "Requested Shutdown": Category.STOP,
    "Forced outage": Category.FORCED_OUTAGE,
    "Forced Outage": Category.FORCED_OUTAGE,
    "Full Performance": Category.NORMAL,
    "Informational": Category.NORMAL,
}


@dataclass(frozen=True)
class ScadaRecord:
    timestamp: int  # seconds since epoch, UTC
    wind_speed: float
    active_power: float


@dataclass(frozen=True)
class StatusEvent:
    start: int
    end: int
    category: Category
    label: str = ""

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"event start {self.start} after end {self.end}")


@dataclass
class ParseResult:
    records: list
    dropped_malformed: int = 0


@dataclass
class FilterAudit:
    input_rows: int = 0
    kept_rows: int = 0
    removed_by_event: int = 0
    removed_pre_outage: int = 0
    dropped_malformed: int = 0

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=False)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def balanced(self):
        return self.removed_by_event + self.removed_pre_outage + self.kept_rows == self.input_rows


def parse_timestamp(text):
    """Seconds since epoch for "YYYY-MM-DD HH:MM[:SS]" or ISO-8601 text.

    Naive timestamps are taken as UTC.
    """
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _open_table(path, marker=None, preamble_limit=200):
    """Open a delimited table, skipping any free-text preamble.

    With ``marker`` the header is the first line containing that column name
    (within ``preamble_limit`` lines); otherwise the first non-blank line.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(errno.ENOENT, "no such file", str(path))
    fh = path.open(newline="", encoding="utf-8-sig")
    skipped = []
    header = None
    for line in fh:
        if not line.strip():
            continue
        if marker is None or marker in line:
            header = line
            break
        skipped.append(line)
        if len(skipped) >= preamble_limit:
            break
    if header is None:
        if not skipped:
            fh.close()
            return None, None, iter(())
        # no marker found: fall back to the first line so the caller reports
        # the missing column
        header, rest = skipped[0], skipped[1:]
    else:
        rest = []
    delim = "\t" if header.count("\t") > header.count(",") else ","
    reader = csv.reader(_chain([header] + rest, fh), delimiter=delim)
    cols = [c.strip() for c in next(reader)]
    return fh, cols, reader


def _chain(first, rest):
    yield from first
    yield from rest


def _index(cols, name, path):
    try:
        return cols.index(name)
    except ValueError:
        raise SchemaMismatch(name, path) from None


def parse_scada(path, schema=None) -> ParseResult:
    """Read a delimited SCADA table into :class:`ScadaRecord` rows.

    Rows with an unparseable timestamp or a missing/non-numeric wind or power
    cell are dropped and counted.  Row order is preserved.
    """
    schema = {**KELMARSH_SCADA_SCHEMA, **(schema or {})}
    fh, cols, reader = _open_table(path, schema["timestamp"])
    if cols is None:
        return ParseResult([], 0)
    try:
        it = _index(cols, schema["timestamp"], path)
        iw = _index(cols, schema["wind_speed"], path)
        ip = _index(cols, schema["active_power"], path)
        need = max(it, iw, ip)
        records = []
        dropped = 0
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) <= need:
                dropped += 1
                continue
            try:
                ts = parse_timestamp(row[it])
                ws = float(row[iw])
                pw = float(row[ip])
            except ValueError:
                dropped += 1
                continue
            if not (np.isfinite(ws) and np.isfinite(pw)) or ws < 0:
                dropped += 1
                continue
            records.append(ScadaRecord(ts, ws, pw))
    finally:
        fh.close()
    return ParseResult(records, dropped)


def parse_events(path, category_map=None, schema=None):
    """Read a status/event table into chronologically sorted events.

    Each row may carry several label columns.  Every distinct mapped category
    found on a row yields its own event (so a row that is both a "Stop" and a
    "Forced outage" produces two overlapping events).  Rows with no mapped
    label become a single ``Other`` event.
    """
    schema = {**KELMARSH_EVENT_SCHEMA, **(schema or {})}
    cmap = KELMARSH_CATEGORY_MAP if category_map is None else category_map
    cmap = {k: Category(v) for k, v in cmap.items()}
    labels = schema["labels"]
    if isinstance(labels, str):
        labels = (labels,)
    fh, cols, reader = _open_table(path, schema["start"])
    if cols is None:
        return []
    try:
        i_start = _index(cols, schema["start"], path)
        i_end = _index(cols, schema["end"], path)
        present = [c for c in labels if c in cols]
        if not present:
            raise SchemaMismatch(labels[0], path)
        i_labels = [cols.index(c) for c in present]
        events = []
        for row in reader:
            if not row or len(row) <= max(i_start, i_end):
                continue
            try:
                start = parse_timestamp(row[i_start])
                end = parse_timestamp(row[i_end]) if row[i_end].strip() else start
            except ValueError:
                continue
            found = {}
            first_label = ""
            for i in i_labels:
                lab = row[i].strip() if i < len(row) else ""
                if lab and not first_label:
                    first_label = lab
                cat = cmap.get(lab)
                if cat is not None and cat not in found:
                    found[cat] = lab
            if not found:
                found = {Category.OTHER: first_label}
            elif len(found) > 1:
                found.pop(Category.NORMAL, None)
            for cat, lab in found.items():
                events.append(StatusEvent(start, max(start, end), cat, lab))
    finally:
        fh.close()
    events.sort(key=lambda e: (e.start, e.end, e.category.value))
    return events


def _cover(times, starts, ends):
    """Boolean mask of ``times`` lying in any half-open ``[start, end)``."""
    if len(starts) == 0 or len(times) == 0:
        return np.zeros(len(times), dtype=bool)
    lo = np.searchsorted(times, starts, side="left")
    hi = np.searchsorted(times, ends, side="left")
    delta = np.zeros(len(times) + 1, dtype=np.int64)
    np.add.at(delta, lo, 1)
    np.add.at(delta, hi, -1)
    return np.cumsum(delta[:-1]) > 0


def filter_operational(records, events, pre_outage_window=PRE_OUTAGE_WINDOW,
                       dropped_malformed=0, excluded=EXCLUDED_CATEGORIES):
    """Drop records during standby/warning/stop events and in the window before forced outages.

    Returns ``(kept, audit)``.
    """
    window = int(pre_outage_window.total_seconds()
                 if isinstance(pre_outage_window, timedelta) else pre_outage_window)
    times = np.fromiter((r.timestamp for r in records), dtype=np.int64, count=len(records))
    if len(times) > 1 and np.any(np.diff(times) < 0):
        raise ValueError("records must be sorted by time")
    ev = [e for e in events if e.category in excluded]
    fo = [e for e in events if e.category == Category.FORCED_OUTAGE]
    rule_a = _cover(times, np.array([e.start for e in ev], dtype=np.int64),
                    np.array([e.end for e in ev], dtype=np.int64))
    fo_start = np.array([e.start for e in fo], dtype=np.int64)
    rule_b = _cover(times, fo_start - window, fo_start) & ~rule_a
    keep = ~(rule_a | rule_b)
    kept = [r for r, k in zip(records, keep) if k]
    audit = FilterAudit(
        input_rows=len(records),
        kept_rows=len(kept),
        removed_by_event=int(rule_a.sum()),
        removed_pre_outage=int(rule_b.sum()),
        dropped_malformed=int(dropped_malformed),
    )
    return kept, audit


def dedupe_sorted(records):
    """Sort by time and keep the first record per timestamp."""
    out = []
    last = None
    for r in sorted(records, key=lambda r: r.timestamp):
        if r.timestamp != last:
            out.append(r)
            last = r.timestamp
    return out
