"""Decision-record ingestion, mean imputation and time-window partitioning.

Records are held column-wise in a :class:`RecordBatch` (numpy arrays keyed by
feature name) so that windows of a million rows stay cheap to score and bin.
:class:`DecisionRecord` is the row view handed out by :meth:`RecordBatch.records`.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    AllMissingFeature,
    ConfigError,
    DataError,
    EmptySource,
    InsufficientWindows,
    IoFailure,
    MissingColumn,
    ThresholdedParseFailure,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
UNLABELED = -1
MALFORMED_TRIPWIRE = 0.5

_TIMESTAMP_ALIASES = {
    "year-month": "%Y-%m",
    "YYYY-MM": "%Y-%m",
    "mon-year": "%b-%Y",
}
_MISSING_TOKENS = {"", "na", "nan", "null", "none", "n/a"}
_TS_DTYPE = "datetime64[us]"


@dataclass(frozen=True)
class SchemaMapping:
    """How the columns of a source file map onto decision records."""

    timestamp_column: str
    feature_columns: tuple[str, ...]
    label_column: str | None = None
    label_positive_value: str = "1"
    timestamp_format: str = "iso"
    id_column: str | None = None
    delimiter: str = ","

    def __post_init__(self):
        object.__setattr__(self, "feature_columns", tuple(self.feature_columns))
        if not self.feature_columns:
            raise ConfigError("feature_columns must not be empty")
        if len(set(self.feature_columns)) != len(self.feature_columns):
            raise ConfigError("feature_columns contains duplicates")
        if self.timestamp_column in self.feature_columns:
            raise ConfigError(
                f"timestamp column {self.timestamp_column!r} is also listed as a feature"
            )

    @property
    def required_columns(self) -> list[str]:
        cols = [self.timestamp_column, *self.feature_columns]
        if self.label_column:
            cols.append(self.label_column)
        if self.id_column:
            cols.append(self.id_column)
        return cols

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "timestamp_column": self.timestamp_column,
            "feature_columns": list(self.feature_columns),
            "label_column": self.label_column,
            "label_positive_value": self.label_positive_value,
            "timestamp_format": self.timestamp_format,
            "id_column": self.id_column,
            "delimiter": self.delimiter,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SchemaMapping":
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema mapping version: {version!r}")
        try:
            return cls(
                timestamp_column=doc["timestamp_column"],
                feature_columns=tuple(doc["feature_columns"]),
                label_column=doc.get("label_column"),
                label_positive_value=str(doc.get("label_positive_value", "1")),
                timestamp_format=doc.get("timestamp_format", "iso"),
                id_column=doc.get("id_column"),
                delimiter=doc.get("delimiter", ","),
            )
        except KeyError as exc:
            raise ConfigError(f"schema mapping is missing key {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "SchemaMapping":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read schema mapping {path}: {exc}") from None
        return cls.from_dict(doc)


@dataclass(frozen=True)
class DecisionRecord:
    id: str
    timestamp: datetime
    features: dict[str, float]
    label: int | None = None


@dataclass(frozen=True, eq=False)
class RecordBatch:
    """Column-oriented, read-only collection of decision records.

    ``labels`` uses ``-1`` for an absent label. Missing feature values are NaN
    until :func:`impute_missing` runs.
    """

    ids: np.ndarray
    timestamps: np.ndarray
    features: Mapping[str, np.ndarray]
    labels: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.ids)
        ids = np.asarray(self.ids, dtype=str)
        ts = np.asarray(self.timestamps, dtype=_TS_DTYPE)
        feats = {}
        for name, col in self.features.items():
            arr = np.array(col, dtype=np.float64)
            if arr.shape != (n,):
                raise ValueError(f"feature {name!r} has shape {arr.shape}, expected ({n},)")
            arr.flags.writeable = False
            feats[name] = arr
        if ts.shape != (n,):
            raise ValueError("timestamps length does not match ids")
        labels = None
        if self.labels is not None:
            labels = np.array(self.labels, dtype=np.int8)
            if labels.shape != (n,):
                raise ValueError("labels length does not match ids")
            if not np.isin(labels, (UNLABELED, 0, 1)).all():
                raise ValueError("labels must be 0, 1 or -1 (unlabeled)")
            labels.flags.writeable = False
        ids = ids.copy()
        ts = ts.copy()
        ids.flags.writeable = False
        ts.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(self.features)

    @property
    def fully_labeled(self) -> bool:
        return self.labels is not None and bool((self.labels != UNLABELED).all())

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """Stack the named feature columns into an ``(n, len(names))`` array."""
        if not names:
            return np.empty((len(self), 0))
        return np.column_stack([self.features[name] for name in names])

    def take(self, index) -> "RecordBatch":
        return RecordBatch(
            ids=self.ids[index],
            timestamps=self.timestamps[index],
            features={k: v[index] for k, v in self.features.items()},
            labels=None if self.labels is None else self.labels[index],
        )

    def canonical_order(self) -> np.ndarray:
        # lexsort: last key is primary
        return np.lexsort((self.ids, self.timestamps))

    def sorted(self) -> "RecordBatch":
        return self.take(self.canonical_order())

    def replace(self, *, features=None, labels=None) -> "RecordBatch":
        """Copy with some feature columns and/or the label column swapped out."""
        feats = dict(self.features)
        if features:
            unknown = set(features) - set(feats)
            if unknown:
                raise KeyError(f"unknown features: {sorted(unknown)}")
            feats.update(features)
        return RecordBatch(
            ids=self.ids,
            timestamps=self.timestamps,
            features=feats,
            labels=self.labels if labels is None else labels,
        )

    def records(self) -> Iterator[DecisionRecord]:
        names = self.feature_names
        for i in range(len(self)):
            label = None
            if self.labels is not None and self.labels[i] != UNLABELED:
                label = int(self.labels[i])
            yield DecisionRecord(
                id=str(self.ids[i]),
                timestamp=self.timestamps[i].astype(datetime),
                features={name: float(self.features[name][i]) for name in names},
                label=label,
            )

    @classmethod
    def from_records(cls, records: Sequence[DecisionRecord], feature_names=None) -> "RecordBatch":
        records = list(records)
        if feature_names is None:
            feature_names = list(records[0].features) if records else []
        labels = None
        if any(r.label is not None for r in records):
            labels = [UNLABELED if r.label is None else r.label for r in records]
        return cls(
            ids=[r.id for r in records],
            timestamps=np.array([np.datetime64(r.timestamp, "us") for r in records], dtype=_TS_DTYPE),
            features={
                name: [r.features.get(name, math.nan) for r in records] for name in feature_names
            },
            labels=labels,
        )

    @classmethod
    def concat(cls, batches: Sequence["RecordBatch"]) -> "RecordBatch":
        batches = [b for b in batches]
        names = batches[0].feature_names
        has_labels = any(b.labels is not None for b in batches)
        labels = None
        if has_labels:
            labels = np.concatenate(
                [b.labels if b.labels is not None else np.full(len(b), UNLABELED) for b in batches]
            )
        return cls(
            ids=np.concatenate([b.ids for b in batches]),
            timestamps=np.concatenate([b.timestamps for b in batches]),
            features={n: np.concatenate([b.features[n] for b in batches]) for n in names},
            labels=labels,
        )

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.ids).astype("U").tobytes())
        h.update(self.timestamps.astype(np.int64).tobytes())
        for name in sorted(self.features):
            h.update(name.encode())
            h.update(self.features[name].tobytes())
        if self.labels is not None:
            h.update(self.labels.tobytes())
        return h.hexdigest()


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_dropped: int = 0
    missing_counts: dict[str, int] = field(default_factory=dict)
    imputed_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_dropped": self.rows_dropped,
            "missing_counts": dict(self.missing_counts),
            "imputed_counts": dict(self.imputed_counts),
        }


@lru_cache(maxsize=65536)
def _parse_timestamp_cached(text: str, fmt: str) -> datetime | None:
    fmt = _TIMESTAMP_ALIASES.get(fmt, fmt)
    try:
        if fmt == "iso":
            if text.endswith("Z"):
                text = text[:-1] + "+00:00"
            ts = datetime.fromisoformat(text)
        else:
            ts = datetime.strptime(text, fmt)
    except ValueError:
        return None
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return ts


def parse_timestamp(text, fmt: str = "iso") -> datetime | None:
    """Parse one timestamp; ``None`` when it does not match ``fmt``."""
    if text is None:
        return None
    text = str(text).strip()
    if not text:
        return None
    return _parse_timestamp_cached(text, fmt)


def format_timestamp(ts: datetime, fmt: str = "iso") -> str:
    fmt = _TIMESTAMP_ALIASES.get(fmt, fmt)
    if fmt == "iso":
        return ts.isoformat()
    return ts.strftime(fmt)


def _parse_float(value) -> float:
    if value is None or isinstance(value, bool):
        return math.nan
    if isinstance(value, (int, float)):
        out = float(value)
    else:
        text = str(value).strip()
        if text.lower() in _MISSING_TOKENS:
            return math.nan
        text = text.rstrip("%")
        try:
            out = float(text)
        except ValueError:
            return math.nan
    return out if math.isfinite(out) else math.nan


def _is_line_json(path: Path) -> bool:
    return path.suffix.lower() in {".jsonl", ".ndjson", ".json"}


def _iter_rows(path: Path, mapping: SchemaMapping) -> Iterator[Mapping]:
    if _is_line_json(path):
        with path.open(encoding="utf-8") as fh:
            first = True
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError:
                    row = None
                if first:
                    if not isinstance(row, dict):
                        raise DataError(f"{path}: first line is not a JSON object")
                    _check_columns(row.keys(), mapping, path)
                    first = False
                yield row if isinstance(row, dict) else {}
    else:
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh, delimiter=mapping.delimiter)
            if reader.fieldnames is None:
                return
            _check_columns(reader.fieldnames, mapping, path)
            yield from reader


def _check_columns(present, mapping: SchemaMapping, path: Path) -> None:
    present = set(present)
    missing = [c for c in mapping.required_columns if c not in present]
    if missing:
        raise MissingColumn(f"{path}: columns not found: {', '.join(missing)}")


def load_records(source: str | Path, mapping: SchemaMapping) -> tuple[RecordBatch, IngestReport]:
    """Read a delimited or line-JSON file into a :class:`RecordBatch`.

    Rows whose timestamp cannot be parsed are dropped and counted. If more than
    half of the rows are dropped the whole load fails, on the assumption that
    the mapping does not describe the file. Missing or non-numeric feature
    values become NaN and are counted per feature.
    """
    path = Path(source)
    if not path.is_file():
        raise DataError(f"no such file: {path}")

    ids: list[str] = []
    stamps: list[datetime] = []
    cols: dict[str, list[float]] = {name: [] for name in mapping.feature_columns}
    labels: list[int] = []
    report = IngestReport(missing_counts={name: 0 for name in mapping.feature_columns})

    for row_no, row in enumerate(_iter_rows(path, mapping)):
        report.rows_read += 1
        ts = parse_timestamp(row.get(mapping.timestamp_column), mapping.timestamp_format)
        if ts is None:
            report.rows_dropped += 1
            continue
        stamps.append(ts)
        if mapping.id_column:
            ids.append(str(row.get(mapping.id_column)))
        else:
            ids.append(f"{row_no:010d}")
        for name in mapping.feature_columns:
            value = _parse_float(row.get(name))
            if math.isnan(value):
                report.missing_counts[name] += 1
            cols[name].append(value)
        if mapping.label_column:
            raw = row.get(mapping.label_column)
            raw = "" if raw is None else str(raw).strip()
            if raw == "":
                labels.append(UNLABELED)
            else:
                labels.append(1 if raw == str(mapping.label_positive_value) else 0)

    if report.rows_read == 0:
        raise EmptySource(f"{path}: no data rows")
    if report.rows_dropped > MALFORMED_TRIPWIRE * report.rows_read:
        raise ThresholdedParseFailure(
            f"{path}: {report.rows_dropped} of {report.rows_read} rows have unparseable "
            f"timestamps (format {mapping.timestamp_format!r})"
        )
    if report.rows_dropped:
        logger.warning("dropped %d rows with unparseable timestamps", report.rows_dropped)

    batch = RecordBatch(
        ids=ids,
        timestamps=np.array(stamps, dtype=_TS_DTYPE),
        features=cols,
        labels=labels if mapping.label_column else None,
    )
    return batch, report


def reference_means(records: RecordBatch) -> dict[str, float]:
    """Per-feature means over non-missing values."""
    means = {}
    for name, col in records.features.items():
        ok = ~np.isnan(col)
        if not ok.any():
            raise AllMissingFeature(f"feature {name!r} has no non-missing values")
        means[name] = float(col[ok].mean())
    return means


def impute_missing(
    records: RecordBatch, profile_stats: Mapping[str, float] | None = None
) -> tuple[RecordBatch, dict[str, int]]:
    """Replace NaN feature values with reference means.

    With ``profile_stats=None`` the batch is treated as the reference window
    and means come from its own non-missing values.
    """
    if profile_stats is None:
        profile_stats = reference_means(records)
    replaced = {}
    counts = {}
    for name, col in records.features.items():
        missing = np.isnan(col)
        n_missing = int(missing.sum())
        counts[name] = n_missing
        if not n_missing:
            continue
        if name not in profile_stats:
            raise ConfigError(f"no imputation mean for feature {name!r}")
        filled = col.copy()
        filled[missing] = profile_stats[name]
        replaced[name] = filled
    if not replaced:
        return records, counts
    return records.replace(features=replaced), counts


@dataclass(frozen=True)
class WindowPolicy:
    kind: str = "calendar_year"
    span_days: int | None = None

    def __post_init__(self):
        if self.kind not in ("calendar_year", "fixed_days"):
            raise ConfigError(f"unknown window policy {self.kind!r}")
        if self.kind == "fixed_days" and (self.span_days is None or self.span_days <= 0):
            raise ConfigError("fixed_days windows need a positive span_days")

    @classmethod
    def parse(cls, text: str) -> "WindowPolicy":
        """Accepts ``calendar_year``, ``fixed:N`` or ``fixed_days:N``."""
        text = text.strip()
        if text == "calendar_year":
            return cls("calendar_year")
        head, _, tail = text.partition(":")
        if head in ("fixed", "fixed_days") and tail:
            try:
                return cls("fixed_days", int(tail))
            except ValueError:
                pass
        raise ConfigError(f"bad window policy {text!r}; use calendar_year or fixed:N")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "span_days": self.span_days}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "WindowPolicy":
        return cls(doc["kind"], doc.get("span_days"))


@dataclass(frozen=True)
class Window:
    index: int
    start: np.datetime64
    end: np.datetime64
    records: RecordBatch

    @property
    def empty(self) -> bool:
        return len(self.records) == 0


@dataclass(frozen=True)
class WindowedDataset:
    windows: tuple[Window, ...]
    policy: WindowPolicy
    origin: np.datetime64
    warnings: tuple[str, ...] = ()
    reference_index: int = 0

    @property
    def reference(self) -> Window:
        return self.windows[self.reference_index]

    @property
    def monitoring(self) -> tuple[Window, ...]:
        return self.windows[self.reference_index + 1:]

    @property
    def n_records(self) -> int:
        return sum(len(w.records) for w in self.windows)

    def with_batches(self, batches: Sequence[RecordBatch]) -> "WindowedDataset":
        """Same window layout, new record batches (one per window)."""
        if len(batches) != len(self.windows):
            raise ValueError("need one batch per window")
        windows = tuple(
            Window(w.index, w.start, w.end, b) for w, b in zip(self.windows, batches)
        )
        return WindowedDataset(windows, self.policy, self.origin, self.warnings, self.reference_index)

    def all_records(self) -> RecordBatch:
        return RecordBatch.concat([w.records for w in self.windows])

    def fingerprint(self) -> dict:
        batch = self.all_records()
        h = hashlib.sha256()
        for w in self.windows:
            h.update(f"{w.index}|{w.start}|{w.end}|{len(w.records)}|".encode())
            h.update(w.records.content_hash().encode())
        ts = batch.timestamps
        return {
            "row_count": len(batch),
            "time_range": [str(ts.min()), str(ts.max())] if len(ts) else None,
            "window_count": len(self.windows),
            "window_sizes": [len(w.records) for w in self.windows],
            "content_sha256": h.hexdigest(),
        }


def _window_bounds(policy: WindowPolicy, origin: np.datetime64, index: int):
    if policy.kind == "calendar_year":
        year = int(origin.astype("datetime64[Y]").astype(int)) + 1970 + index
        return (
            np.datetime64(f"{year:04d}-01-01", "us"),
            np.datetime64(f"{year + 1:04d}-01-01", "us"),
        )
    span = np.timedelta64(policy.span_days, "D").astype("timedelta64[us]")
    return origin + index * span, origin + (index + 1) * span


def window_origin(records: RecordBatch, policy: WindowPolicy) -> np.datetime64:
    tmin = records.timestamps.min()
    if policy.kind == "calendar_year":
        return tmin.astype("datetime64[Y]").astype(_TS_DTYPE)
    return tmin


def window_indices(timestamps: np.ndarray, policy: WindowPolicy, origin: np.datetime64) -> np.ndarray:
    ts = np.asarray(timestamps, dtype=_TS_DTYPE)
    if policy.kind == "calendar_year":
        years = ts.astype("datetime64[Y]").astype(np.int64)
        return years - origin.astype("datetime64[Y]").astype(np.int64)
    span = np.timedelta64(policy.span_days, "D").astype("timedelta64[us]").astype(np.int64)
    return (ts - origin).astype(np.int64) // span


def partition_windows(
    records: RecordBatch,
    policy: WindowPolicy,
    *,
    origin: np.datetime64 | None = None,
    min_windows: int = 2,
) -> WindowedDataset:
    """Split records into ordered, non-overlapping time windows.

    Window 0 starts at ``origin`` (default: the earliest record, or its
    calendar year). Empty windows between non-empty ones are kept and flagged
    in ``warnings``. Each window's records are sorted by (timestamp, id).
    """
    if len(records) == 0:
        raise InsufficientWindows("no records to partition")
    if origin is None:
        origin = window_origin(records, policy)
    else:
        origin = np.datetime64(origin, "us")
    idx = window_indices(records.timestamps, policy, origin)
    if (idx < 0).any():
        raise DataError(f"{int((idx < 0).sum())} records precede the window origin {origin}")

    n_windows = int(idx.max()) + 1
    counts = np.bincount(idx, minlength=n_windows)
    non_empty = int((counts > 0).sum())
    if non_empty < min_windows:
        raise InsufficientWindows(
            f"records span {non_empty} non-empty window(s); at least {min_windows} required"
        )

    windows = []
    warnings = []
    for k in range(n_windows):
        start, end = _window_bounds(policy, origin, k)
        batch = records.take(np.flatnonzero(idx == k)).sorted()
        if len(batch) == 0:
            warnings.append(f"window {k} [{start}, {end}) is empty")
        windows.append(Window(k, start, end, batch))
    for msg in warnings:
        logger.warning(msg)
    return WindowedDataset(tuple(windows), policy, origin, tuple(warnings))


def write_records(records: RecordBatch, path: str | Path, *, delimiter: str = ",") -> SchemaMapping:
    """Write records to CSV or line-JSON (by extension) and return a mapping
    that reads the file back losslessly."""
    path = Path(path)
    names = list(records.feature_names)
    has_labels = records.labels is not None
    mapping = SchemaMapping(
        timestamp_column="timestamp",
        feature_columns=tuple(names),
        label_column="label" if has_labels else None,
        label_positive_value="1",
        timestamp_format="iso",
        id_column="id",
        delimiter=delimiter,
    )
    stamps = records.timestamps.astype(datetime)
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            if _is_line_json(path):
                for i in range(len(records)):
                    row = {"id": str(records.ids[i]), "timestamp": stamps[i].isoformat()}
                    for name in names:
                        v = float(records.features[name][i])
                        row[name] = None if math.isnan(v) else v
                    if has_labels:
                        lab = int(records.labels[i])
                        row["label"] = None if lab == UNLABELED else lab
                    fh.write(json.dumps(row) + "\n")
            else:
                writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
                writer.writerow(["id", "timestamp", *names] + (["label"] if has_labels else []))
                for i in range(len(records)):
                    row = [str(records.ids[i]), stamps[i].isoformat()]
                    row += ["" if math.isnan(v) else repr(float(v))
                            for v in (records.features[n][i] for n in names)]
                    if has_labels:
                        lab = int(records.labels[i])
                        row.append("" if lab == UNLABELED else str(lab))
                    writer.writerow(row)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from None
    return mapping
