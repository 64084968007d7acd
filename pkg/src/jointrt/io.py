"""File formats: matrix CSVs, JSON reports, run manifests and CSSE ingestion.

Every write goes to a temporary file in the destination directory which is
then renamed over the target, so readers never observe partial output.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import platform
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from .model import CountMatrix

CSSE_HEADER = ("Province/State", "Country/Region", "Lat", "Long")
CSSE_DATE_FORMAT = "%m/%d/%y"
SAMPLE_COUNTRIES = ("France", "Italy", "United Kingdom")
SAMPLE_START = date(2020, 9, 1)
SAMPLE_END = date(2021, 10, 1)


class IngestError(ValueError):
    """Base class for problems with an input count file."""


class UnknownTerritoryError(IngestError):
    def __init__(self, missing, available):
        self.missing = list(missing)
        self.available = sorted(available)
        super().__init__(
            f"unknown territories {self.missing}; available: {', '.join(self.available)}"
        )


class CsvParseError(IngestError):
    def __init__(self, path, line: int, reason: str):
        self.path, self.line = str(path), line
        super().__init__(f"{path}:{line}: {reason}")


class DateRangeError(IngestError):
    pass


# -- atomic writes -------------------------------------------------------------


def write_text_atomic(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_matrix_csv(path, M, row_ids, col_ids, row_header: str = "territory") -> Path:
    """Labelled matrix with 17 significant digits (exact float round trip)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (len(row_ids), len(col_ids)):
        raise ValueError(f"matrix shape {M.shape} does not match labels {(len(row_ids), len(col_ids))}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([row_header, *map(str, col_ids)])
    for rid, row in zip(row_ids, M):
        w.writerow([str(rid), *map(_fmt, row)])
    return write_text_atomic(path, buf.getvalue())


def read_matrix_csv(path) -> tuple[np.ndarray, list[str], list[str]]:
    """Inverse of :func:`write_matrix_csv`; labels come back as strings."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(path, 1, "empty file") from None
        cols = header[1:]
        rows, ids = [], []
        for rec in reader:
            if not rec:
                continue
            if len(rec) != len(header):
                raise CsvParseError(path, reader.line_num, f"expected {len(header)} fields, got {len(rec)}")
            try:
                rows.append([float(v) for v in rec[1:]])
            except ValueError as exc:
                raise CsvParseError(path, reader.line_num, str(exc)) from None
            ids.append(rec[0])
    M = np.array(rows, dtype=float).reshape(len(ids), len(cols))
    return M, ids, cols


def write_json(path, obj) -> Path:
    return write_text_atomic(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (Path, date)):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- run manifests ---------------------------------------------------------------


def artifact_versions() -> dict[str, str]:
    import numba
    import scipy

    from . import __version__

    return {
        "jointrt": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


@dataclass
class RunManifest:
    """What was run, on which inputs, and what it produced."""

    command: str
    argv: list[str]
    config: dict
    seed: int | None = None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    versions: dict[str, str] = field(default_factory=artifact_versions)

    def add_input(self, path) -> None:
        path = Path(path)
        files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
        for p in files:
            self.inputs[str(p)] = sha256_file(p)

    def add_outputs(self, paths, root) -> None:
        for p in paths:
            self.outputs[str(Path(p).relative_to(root))] = sha256_file(p)

    def write(self, out_dir, name: str = "manifest.json") -> Path:
        return write_json(Path(out_dir) / name, asdict(self))


def read_manifest(path) -> RunManifest:
    return RunManifest(**json.loads(Path(path).read_text()))


# -- CSSE ingestion ------------------------------------------------------------------


def parse_date(s) -> date:
    """ISO ``YYYY-MM-DD`` or CSSE ``m/d/yy``."""
    if isinstance(s, date):
        return s
    for fmt in ("%Y-%m-%d", CSSE_DATE_FORMAT):
        try:
            return datetime.strptime(str(s).strip(), fmt).date()
        except ValueError:
            pass
    raise ValueError(f"unrecognized date {s!r}")


@dataclass(frozen=True)
class IngestConfig:
    input: Path
    countries: tuple[str, ...]
    start: date
    end: date
    clip: bool = True
    smooth: bool = False

    def __post_init__(self):
        object.__setattr__(self, "input", Path(self.input))
        object.__setattr__(self, "countries", tuple(self.countries))
        object.__setattr__(self, "start", parse_date(self.start))
        object.__setattr__(self, "end", parse_date(self.end))
        if not self.countries:
            raise IngestError("territory selection is empty")
        if self.start > self.end:
            raise DateRangeError(f"start {self.start} is after end {self.end}")


def read_csse(path) -> tuple[dict[str, np.ndarray], list[date]]:
    """Cumulative series per country (province rows summed) and the date axis."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such input file: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(path, 1, "empty file") from None
        if tuple(h.strip() for h in header[:4]) != CSSE_HEADER:
            raise CsvParseError(path, 1, f"expected leading columns {', '.join(CSSE_HEADER)}")
        try:
            dates = [datetime.strptime(h.strip(), CSSE_DATE_FORMAT).date() for h in header[4:]]
        except ValueError as exc:
            raise CsvParseError(path, 1, f"bad date column: {exc}") from None
        if not dates:
            raise CsvParseError(path, 1, "no date columns")
        if any(b - a != timedelta(days=1) for a, b in zip(dates, dates[1:])):
            raise CsvParseError(path, 1, "date columns are not consecutive days")
        series: dict[str, np.ndarray] = {}
        for rec in reader:
            if not rec or all(not v.strip() for v in rec):
                continue
            if len(rec) != len(header):
                raise CsvParseError(path, reader.line_num, f"expected {len(header)} fields, got {len(rec)}")
            try:
                values = np.array([float(v) for v in rec[4:]])
            except ValueError as exc:
                raise CsvParseError(path, reader.line_num, f"non-numeric count ({exc})") from None
            country = rec[1].strip()
            if country in series:
                series[country] = series[country] + values
            else:
                series[country] = values
    return series, dates


def cumulative_to_daily(cum, clip: bool = True) -> np.ndarray:
    """First difference along the last axis; negative increments set to 0 if ``clip``."""
    daily = np.diff(np.asarray(cum, dtype=float), axis=-1)
    return np.maximum(daily, 0.0) if clip else daily


def centered_average(X, width: int = 7) -> np.ndarray:
    """Centered moving average; windows are truncated at the series ends."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    half = width // 2
    cs = np.concatenate([np.zeros((X.shape[0], 1)), np.cumsum(X, axis=1)], axis=1)
    idx = np.arange(X.shape[1])
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, X.shape[1])
    return (cs[:, hi] - cs[:, lo]) / (hi - lo)


def _daily_matrix(cfg: IngestConfig):
    series, dates = read_csse(cfg.input)
    missing = [c for c in cfg.countries if c not in series]
    if missing:
        raise UnknownTerritoryError(missing, series)
    # the first file date has no predecessor, so daily values start one day later
    daily_dates = dates[1:]
    if cfg.start < daily_dates[0] or cfg.end > daily_dates[-1]:
        raise DateRangeError(
            f"requested {cfg.start}..{cfg.end}, daily coverage is {daily_dates[0]}..{daily_dates[-1]}"
        )
    cum = np.vstack([series[c] for c in cfg.countries])
    daily = cumulative_to_daily(cum, clip=cfg.clip)
    if cfg.smooth:
        daily = centered_average(daily, 7)
    return daily, daily_dates


def ingest_jhu(cfg: IngestConfig) -> CountMatrix:
    """Daily incidence for the selected countries over ``[start, end]``.

    Negative increments are clipped before smoothing; smoothing uses the
    days just outside the window when the file has them.
    """
    daily, dates = _daily_matrix(cfg)
    i0 = (cfg.start - dates[0]).days
    i1 = (cfg.end - dates[0]).days + 1
    counts = daily[:, i0:i1]
    if np.any(counts < 0):
        # only reachable with clipping off
        raise IngestError("negative daily counts in range; enable clipping")
    return CountMatrix(counts, list(cfg.countries), [d.isoformat() for d in dates[i0:i1]])


def ingest_history(cfg: IngestConfig, days: int) -> np.ndarray:
    """The ``days`` daily counts preceding ``start`` (zero where not covered)."""
    daily, dates = _daily_matrix(cfg)
    i0 = (cfg.start - dates[0]).days
    hist = np.zeros((daily.shape[0], days))
    avail = min(days, i0)
    if avail:
        hist[:, days - avail :] = daily[:, i0 - avail : i0]
    return np.maximum(hist, 0.0)


def write_tidy_csv(path, records) -> Path:
    """Rows ``(territory, date, value, series)``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["territory", "date", "value", "series"])
    for terr, d, v, s in records:
        w.writerow([terr, d, _fmt(v), s])
    return write_text_atomic(path, buf.getvalue())
