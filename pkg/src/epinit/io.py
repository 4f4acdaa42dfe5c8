"""CSV ingestion of reported incidence and the CSV exports."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import numpy as np

from .model import STATE_NAMES
from .simulator import MeasurementSeries

INCIDENCE_HEADER = ["date", "county", "cumulative_cases"]


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class IncidenceRecord:
    date: dt.date
    county: str
    cumulative_cases: int
    line: int = field(default=0, compare=False)


@dataclass
class IncidenceData:
    """Per-county series on a common daily axis starting at ``dates[0]``."""

    dates: List[dt.date]
    series: Dict[str, MeasurementSeries]
    #: index into the file's own date axis where day 0 was placed
    start_offset: int = 0


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(path, header: List[str], rows: Iterable[Iterable]) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_incidence_records(path) -> List[IncidenceRecord]:
    path = Path(path)
    try:
        fh = path.open(encoding="utf-8", newline="")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    records = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != INCIDENCE_HEADER:
            raise IngestError(f"{path}:1: expected header {','.join(INCIDENCE_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 3:
                raise IngestError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                date = dt.date.fromisoformat(row[0])
                cases = int(row[2])
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: malformed row {row}: {exc}") from exc
            if cases < 0:
                raise IngestError(f"{path}:{lineno}: negative cumulative count {cases}")
            if not row[1]:
                raise IngestError(f"{path}:{lineno}: empty county name")
            records.append(IncidenceRecord(date, row[1], cases, lineno))
    if not records:
        raise IngestError(f"{path}: no data rows")
    return records


def ingest_incidence(path, threshold: Optional[int] = None) -> IncidenceData:
    """Read ``date,county,cumulative_cases`` rows into per-county series.

    Days without a report carry the previous cumulative value forward; days
    before a county's first report count as zero. With ``threshold`` set,
    day 0 is the first date on which the summed count over counties reaches it.
    """
    records = read_incidence_records(path)
    by_county: Dict[str, Dict[dt.date, IncidenceRecord]] = {}
    for rec in records:
        days = by_county.setdefault(rec.county, {})
        if rec.date in days:
            raise IngestError(f"{path}:{rec.line}: duplicate date {rec.date} for county {rec.county}")
        days[rec.date] = rec
    for county, days in by_county.items():
        prev = None
        for date in sorted(days):
            cur = days[date]
            if prev is not None and cur.cumulative_cases < prev.cumulative_cases:
                raise IngestError(
                    f"{path}:{cur.line}: cumulative count decreases for county {county} on {date} "
                    f"({prev.cumulative_cases} -> {cur.cumulative_cases})")
            prev = cur

    first = min(r.date for r in records)
    last = max(r.date for r in records)
    axis = [first + dt.timedelta(days=i) for i in range((last - first).days + 1)]
    filled = {}
    for county in sorted(by_county):
        days = by_county[county]
        vals, cur = [], 0
        for date in axis:
            if date in days:
                cur = days[date].cumulative_cases
            vals.append(cur)
        filled[county] = np.array(vals, dtype=float)

    start = 0
    if threshold is not None:
        total = np.sum(list(filled.values()), axis=0)
        hits = np.flatnonzero(total >= threshold)
        if hits.size == 0:
            raise IngestError(f"{path}: summed cumulative count never reaches threshold {threshold}")
        start = int(hits[0])
    series = {c: MeasurementSeries(v[start:], r=0.0, label=c) for c, v in filled.items()}
    return IncidenceData(axis[start:], series, start)


def write_incidence(path, data: IncidenceData) -> Path:
    rows = []
    for i, date in enumerate(data.dates):
        for county in sorted(data.series):
            rows.append((date.isoformat(), county, int(round(data.series[county].y[i]))))
    return _write_rows(path, INCIDENCE_HEADER, rows)


def write_trajectories(path, trajectories) -> Path:
    """Ensemble export with columns ``realization, k`` and the five states."""
    def rows():
        for j, traj in enumerate(trajectories):
            for k, x in enumerate(traj.states):
                yield (j, k, *(float(v) for v in x))
    return _write_rows(path, ["realization", "k", *STATE_NAMES], rows())


def table_row(county: str, est) -> tuple:
    """Estimate export row; populations are clamped at zero and rounded."""
    x = np.rint(np.maximum(est.x, 0.0)).astype(int)
    ic, i, a, e, phi = x
    return (county, est.method, i, e, a, ic, phi, bool(est.converged), int(est.iterations))


ESTIMATE_HEADER = ["county", "method", "I", "E", "A", "I_c", "phi", "converged", "iterations"]


def write_estimates(path, rows) -> Path:
    return _write_rows(path, ESTIMATE_HEADER, rows)


def read_estimates(path) -> Dict[str, Dict[str, tuple]]:
    """county -> method -> (I, E, A) from an estimate export."""
    out: Dict[str, Dict[str, tuple]] = {}
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), 2):
            try:
                iea = (int(row["I"]), int(row["E"]), int(row["A"]))
            except (KeyError, ValueError) as exc:
                raise IngestError(f"{path}:{lineno}: malformed estimate row: {exc}") from exc
            out.setdefault(row["county"], {})[row["method"]] = iea
    return out


def write_kdes(path, study: str, kdes: dict) -> Path:
    def rows():
        for (method, state), kde in kdes.items():
            if kde is None:
                continue
            for g, f in zip(kde.grid, kde.density):
                yield (study, method, state, float(g), float(f))
    return _write_rows(path, ["study", "method", "state", "grid", "density"], rows())


def write_summary(path, summary_rows: List[dict]) -> Path:
    header = ["method", "state", "mean_err", "std_err", "mae", "n_failed"]
    return _write_rows(path, header, ([r[h] for h in header] for r in summary_rows))


def write_table(path, header: List[str], rows) -> Path:
    return _write_rows(path, header, rows)
