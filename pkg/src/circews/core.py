"""Data model and CSV I/O for the ICU time-series pipeline.

Timestamps are naive ISO-8601 strings interpreted as UTC with second
precision.  Floats are written in shortest round-trip form (``repr``), so
files produced by the writers here reload and re-save byte-identically.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta

import numpy as np

logger = logging.getLogger(__name__)

GRID_STEP_MIN = 5.0

VARIABLE_KINDS = ("continuous", "categorical", "binary", "drug")
FREQ_CLASSES = ("high", "medium", "low")
RECORD_STATUSES = ("plain", "infusion", "bolus", "tablet", "zero")

CATALOG_COLUMNS = [
    "variable_id", "name", "kind", "range_lo", "range_hi", "default",
    "freq_class", "acting_period_min", "merge_group", "merge_weight",
]
RECORD_COLUMNS = [
    "patient_id", "variable_id", "sample_time", "enter_time", "value", "status",
]
STATIC_COLUMNS = [
    "patient_id", "admission_time", "age", "sex", "height_cm", "emergency",
    "surgical", "apache_group", "apache_score", "mortality",
]


class DataError(ValueError):
    """Raised for malformed input files or contract violations."""


def parse_ts(text: str, where: str = "") -> datetime:
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        raise DataError(f"malformed timestamp {text!r}{' at ' + where if where else ''}")


def format_ts(ts: datetime) -> str:
    return ts.isoformat(timespec="seconds")


def format_float(value: float | None) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _parse_float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"non-numeric value {text!r} at {where}")


def _parse_opt_float(text: str, where: str) -> float | None:
    if text == "":
        return None
    return _parse_float(text, where)


# ---------------------------------------------------------------------------
# Variable catalog
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VariableEntry:
    variable_id: str
    name: str
    kind: str
    range_lo: float | None = None
    range_hi: float | None = None
    default: float = 0.0
    freq_class: str = "medium"
    acting_period_min: float | None = None
    merge_group: str | None = None
    merge_weight: float | None = None


class VariableCatalog:
    """Read-only registry of measured variables and their metadata.

    Merge-group targets that have no catalog row of their own are
    synthesized from the first group member, so every variable id seen
    downstream of merging resolves here.
    """

    def __init__(self, entries: list[VariableEntry]):
        self._entries: dict[str, VariableEntry] = {}
        for entry in entries:
            if entry.variable_id in self._entries:
                raise DataError(f"duplicate variable {entry.variable_id!r} in catalog")
            self._validate(entry)
            self._entries[entry.variable_id] = entry
        self._check_merge_groups()
        self._synthesize_merge_targets()

    @staticmethod
    def _validate(entry: VariableEntry) -> None:
        if entry.kind not in VARIABLE_KINDS:
            raise DataError(f"variable {entry.variable_id!r}: unknown kind {entry.kind!r}")
        if entry.freq_class not in FREQ_CLASSES:
            raise DataError(
                f"variable {entry.variable_id!r}: unknown frequency class {entry.freq_class!r}")
        if (entry.range_lo is not None and entry.range_hi is not None
                and entry.range_lo > entry.range_hi):
            raise DataError(
                f"variable {entry.variable_id!r}: permitted range is inverted "
                f"({entry.range_lo} > {entry.range_hi})")
        if entry.kind == "drug" and entry.acting_period_min is None:
            raise DataError(f"drug variable {entry.variable_id!r} has no acting period")
        if entry.merge_weight is not None and entry.merge_group is None:
            raise DataError(
                f"variable {entry.variable_id!r}: merge weight without a merge group")

    def _check_merge_groups(self) -> None:
        kinds: dict[str, str] = {}
        for entry in self._entries.values():
            if entry.merge_group is None:
                continue
            seen = kinds.setdefault(entry.merge_group, entry.kind)
            if seen != entry.kind:
                raise DataError(
                    f"merge group {entry.merge_group!r} mixes kinds {seen!r} and {entry.kind!r}")

    def _synthesize_merge_targets(self) -> None:
        for entry in list(self._entries.values()):
            group = entry.merge_group
            if group is None:
                continue
            target = group.split("#", 1)[0]
            if target in self._entries:
                continue
            self._entries[target] = replace(
                entry, variable_id=target, merge_group=None, merge_weight=None)

    def __contains__(self, variable_id: str) -> bool:
        return variable_id in self._entries

    def __iter__(self):
        return iter(self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, variable_id: str) -> VariableEntry:
        try:
            return self._entries[variable_id]
        except KeyError:
            raise DataError(f"variable {variable_id!r} not in catalog")

    def ids(self) -> list[str]:
        return list(self._entries)

    def merge_groups(self) -> dict[str, list[str]]:
        """Map each merge-group id to its member variable ids, in catalog order."""
        groups: dict[str, list[str]] = {}
        for entry in self._entries.values():
            if entry.merge_group is not None:
                groups.setdefault(entry.merge_group, []).append(entry.variable_id)
        return groups


def load_catalog(path: str) -> VariableCatalog:
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CATALOG_COLUMNS:
            raise DataError(f"catalog {path}: expected columns {CATALOG_COLUMNS}")
        for lineno, row in enumerate(reader, start=2):
            where = f"{path}:{lineno}"
            entries.append(VariableEntry(
                variable_id=row["variable_id"],
                name=row["name"],
                kind=row["kind"],
                range_lo=_parse_opt_float(row["range_lo"], where),
                range_hi=_parse_opt_float(row["range_hi"], where),
                default=_parse_float(row["default"], where),
                freq_class=row["freq_class"],
                acting_period_min=_parse_opt_float(row["acting_period_min"], where),
                merge_group=row["merge_group"] or None,
                merge_weight=_parse_opt_float(row["merge_weight"], where),
            ))
    return VariableCatalog(entries)


def write_catalog(entries: list[VariableEntry], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CATALOG_COLUMNS)
        for e in entries:
            writer.writerow([
                e.variable_id, e.name, e.kind,
                format_float(e.range_lo), format_float(e.range_hi),
                format_float(e.default), e.freq_class,
                format_float(e.acting_period_min),
                e.merge_group or "", format_float(e.merge_weight),
            ])


# ---------------------------------------------------------------------------
# Records and statics
# ---------------------------------------------------------------------------

@dataclass
class RawRecord:
    variable_id: str
    sample_time: datetime
    enter_time: datetime
    value: float
    status: str = "plain"


@dataclass
class PatientStatics:
    patient_id: str
    admission_time: datetime
    age: float | None = None
    sex: str | None = None
    height_cm: float | None = None
    emergency: int | None = None
    surgical: int | None = None
    apache_group: str | None = None
    apache_score: float | None = None
    mortality: int | None = None


@dataclass
class PatientStay:
    patient_id: str
    statics: PatientStatics
    records: list[RawRecord] = field(default_factory=list)

    @property
    def admission_time(self) -> datetime:
        return self.statics.admission_time

    def sort_records(self) -> None:
        self.records.sort(key=lambda r: (r.sample_time, r.enter_time, r.variable_id))

    def by_variable(self) -> dict[str, list[RawRecord]]:
        out: dict[str, list[RawRecord]] = {}
        for rec in self.records:
            out.setdefault(rec.variable_id, []).append(rec)
        return out


def _parse_opt_int(text: str, where: str) -> int | None:
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        raise DataError(f"non-integer value {text!r} at {where}")


def load_statics(path: str) -> dict[str, PatientStatics]:
    out: dict[str, PatientStatics] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != STATIC_COLUMNS:
            raise DataError(f"statics {path}: expected columns {STATIC_COLUMNS}")
        for lineno, row in enumerate(reader, start=2):
            where = f"{path}:{lineno}"
            pid = row["patient_id"]
            if pid in out:
                raise DataError(f"duplicate patient {pid!r} at {where}")
            out[pid] = PatientStatics(
                patient_id=pid,
                admission_time=parse_ts(row["admission_time"], where),
                age=_parse_opt_float(row["age"], where),
                sex=row["sex"] or None,
                height_cm=_parse_opt_float(row["height_cm"], where),
                emergency=_parse_opt_int(row["emergency"], where),
                surgical=_parse_opt_int(row["surgical"], where),
                apache_group=row["apache_group"] or None,
                apache_score=_parse_opt_float(row["apache_score"], where),
                mortality=_parse_opt_int(row["mortality"], where),
            )
    return out


def write_statics(statics: list[PatientStatics], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATIC_COLUMNS)
        for s in statics:
            writer.writerow([
                s.patient_id, format_ts(s.admission_time),
                format_float(s.age), s.sex or "", format_float(s.height_cm),
                "" if s.emergency is None else s.emergency,
                "" if s.surgical is None else s.surgical,
                s.apache_group or "", format_float(s.apache_score),
                "" if s.mortality is None else s.mortality,
            ])


def load_records(records_path: str, statics_path: str,
                 catalog: VariableCatalog) -> dict[str, PatientStay]:
    """Parse records + statics into per-patient stays.

    Records for variables absent from the catalog are dropped with a warning;
    records for patients absent from the statics file are an error.  Each
    stay's records come back stably ordered by (sample time, enter time).
    """
    statics = load_statics(statics_path)
    stays = {pid: PatientStay(patient_id=pid, statics=st) for pid, st in statics.items()}
    dropped: dict[str, int] = {}
    with open(records_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RECORD_COLUMNS:
            raise DataError(f"records {records_path}: expected columns {RECORD_COLUMNS}")
        for lineno, row in enumerate(reader, start=2):
            where = f"{records_path}:{lineno}"
            vid = row["variable_id"]
            if vid not in catalog:
                dropped[vid] = dropped.get(vid, 0) + 1
                continue
            pid = row["patient_id"]
            if pid not in stays:
                raise DataError(f"record for unknown patient {pid!r} at {where}")
            status = row["status"] or "plain"
            if status not in RECORD_STATUSES:
                raise DataError(f"unknown record status {status!r} at {where}")
            stays[pid].records.append(RawRecord(
                variable_id=vid,
                sample_time=parse_ts(row["sample_time"], where),
                enter_time=parse_ts(row["enter_time"], where),
                value=_parse_float(row["value"], where),
                status=status,
            ))
    for vid, count in sorted(dropped.items()):
        logger.warning("dropped %d records for uncatalogued variable %r", count, vid)
    for stay in stays.values():
        stay.sort_records()
    return stays


def write_records(stays: list[PatientStay], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_COLUMNS)
        for stay in stays:
            for r in stay.records:
                writer.writerow([
                    stay.patient_id, r.variable_id, format_ts(r.sample_time),
                    format_ts(r.enter_time), format_float(r.value), r.status,
                ])


# ---------------------------------------------------------------------------
# The 5-minute grid
# ---------------------------------------------------------------------------

@dataclass
class GridStay:
    """One patient's stay resampled onto the regular 5-minute grid.

    ``values`` is (n_variables, n_points); ``measured`` flags grid points
    holding a real (non-imputed) observation.  Grid point k sits at
    ``grid_start + k * 5 min`` and represents the surrounding 5-minute
    bucket.  ``states``/``labels`` are attached by the endpoint stage.
    """

    patient_id: str
    admission_time: datetime
    grid_start: datetime
    variables: list[str]
    values: np.ndarray
    measured: np.ndarray
    states: np.ndarray | None = None
    labels: np.ndarray | None = None

    @property
    def n_points(self) -> int:
        return self.values.shape[1]

    def grid_minutes(self) -> np.ndarray:
        return np.arange(self.n_points, dtype=np.float64) * GRID_STEP_MIN

    def time_at(self, index: int) -> datetime:
        return self.grid_start + timedelta(minutes=GRID_STEP_MIN * index)

    def index_of(self, variable_id: str) -> int:
        try:
            return self.variables.index(variable_id)
        except ValueError:
            raise DataError(f"variable {variable_id!r} not on grid for {self.patient_id}")

    def channel(self, variable_id: str) -> np.ndarray:
        return self.values[self.index_of(variable_id)]


def minutes_since(ts: datetime, anchor: datetime) -> float:
    return (ts - anchor).total_seconds() / 60.0


def save_npz(path: str, arrays: dict[str, np.ndarray]) -> None:
    """``np.savez`` with fixed zip-member timestamps.

    The stock writer stamps wall-clock time into the archive, so two runs
    of the same pipeline produce different bytes.  Here every member gets
    a constant timestamp and entries are written in sorted order, making
    the file a pure function of its contents.
    """
    import io
    import zipfile

    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]),
                                      allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_STORED
            zf.writestr(info, buf.getvalue())
