"""Cleaning of raw ICU records: timestamp repair, artefact removal,
duplicate resolution, sample relabelling, dose-to-rate conversion and
merge-group consolidation.

Operations run in a fixed order per stay:

    timestamps -> range -> duplicates -> venous relabel -> BMI swap
    -> pharma rates -> variable merging

Cross-patient statistics used by some rules are computed from training
patients only.  Every deletion or repair is written to an audit log.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta

import numpy as np

from .core import (
    PatientStay, RawRecord, VariableCatalog, format_float, format_ts, parse_ts,
)

logger = logging.getLogger(__name__)

ONE_DAY = timedelta(days=1)

AUDIT_COLUMNS = ["patient_id", "variable_id", "sample_time", "action", "rule_id"]

#: audit actions that remove a record outright
DELETING_ACTIONS = (
    "delete-timestamp", "delete-range",
    "dedupe-identical", "dedupe-mean", "dedupe-conflict", "dedupe-zero",
)


@dataclass(frozen=True)
class AuditEntry:
    patient_id: str
    variable_id: str
    sample_time: datetime
    action: str
    rule_id: str


def write_audit(entries: list[AuditEntry], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AUDIT_COLUMNS)
        for e in entries:
            writer.writerow([e.patient_id, e.variable_id, format_ts(e.sample_time),
                             e.action, e.rule_id])


def load_audit(path: str) -> list[AuditEntry]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(AuditEntry(row["patient_id"], row["variable_id"],
                                  parse_ts(row["sample_time"]), row["action"],
                                  row["rule_id"]))
    return out


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimestampRule:
    """One repair rule for records stranded behind a gap of more than a day.

    ``action`` picks the built-in repair: one of set-year, set-month,
    set-day, swap-month-day, swap-digit.  Boundary-segment deletions
    (delete-before / delete-after) are driven by the thresholds in
    :class:`CleanConfig` rather than listed here.
    """

    rule_id: str
    description: str
    action: str


DEFAULT_TIMESTAMP_RULES = (
    TimestampRule("ts-year", "sample year differs from entry year", "set-year"),
    TimestampRule("ts-month", "sample month differs from entry month", "set-month"),
    TimestampRule("ts-swap-md", "month and day fields transposed", "swap-month-day"),
    TimestampRule("ts-swap-digit",
                  "units digit of month swapped with tens digit of day", "swap-digit"),
    TimestampRule("ts-day", "day off by a multiple of ten", "set-day"),
)


@dataclass
class CleanConfig:
    timestamp_rules: tuple[TimestampRule, ...] = DEFAULT_TIMESTAMP_RULES
    leading_frac: float = 0.10     # boundary segment deletion thresholds
    trailing_frac: float = 0.05
    dup_std_frac: float = 0.05     # duplicate spread allowed, vs global std
    venous_compare: str = "sao2"   # blood-gas oxygen saturation
    venous_reference: str = "cvo2"  # central venous oxygen saturation
    venous_frac: float = 0.10
    venous_window_min: float = 60.0
    bloodgas_relabel: dict[str, str] = field(
        default_factory=lambda: {"sao2": "svo2", "lac_art": "lac_ven"})
    height_var: str = "height"
    weight_var: str = "weight"
    bmi_lo: float = 10.0
    bmi_hi: float = 60.0


# ---------------------------------------------------------------------------
# Cross-patient statistics
# ---------------------------------------------------------------------------

@dataclass
class GlobalStats:
    """Per-variable pooled statistics from the training cohort."""

    std: dict[str, float] = field(default_factory=dict)
    mean: dict[str, float] = field(default_factory=dict)
    count: dict[str, int] = field(default_factory=dict)


def compute_global_stats(stays: list[PatientStay]) -> GlobalStats:
    pooled: dict[str, list[float]] = {}
    for stay in stays:
        for rec in stay.records:
            pooled.setdefault(rec.variable_id, []).append(rec.value)
    stats = GlobalStats()
    for vid, values in pooled.items():
        arr = np.asarray(values, dtype=np.float64)
        stats.std[vid] = float(arr.std())
        stats.mean[vid] = float(arr.mean())
        stats.count[vid] = int(arr.size)
    return stats


# ---------------------------------------------------------------------------
# Timestamp repair
# ---------------------------------------------------------------------------

def _replace_valid(ts: datetime, **fields) -> datetime | None:
    try:
        return ts.replace(**fields)
    except ValueError:
        return None


def _repair_candidate(action: str, st: datetime, et: datetime) -> datetime | None:
    """Candidate repaired sample time for one rule action, or None."""
    if action == "set-year":
        if st.year == et.year:
            return None
        return _replace_valid(st, year=et.year)
    if action == "set-month":
        if st.month == et.month:
            return None
        return _replace_valid(st, month=et.month)
    if action == "set-day":
        if st.day == et.day or abs(st.day - et.day) % 10 != 0:
            return None
        return _replace_valid(st, day=et.day)
    if action == "swap-month-day":
        if st.day > 12 or st.day == st.month:
            return None
        return _replace_valid(st, month=st.day, day=st.month)
    if action == "swap-digit":
        m_tens, m_units = divmod(st.month, 10)
        d_tens, d_units = divmod(st.day, 10)
        new_month = m_tens * 10 + d_tens
        new_day = m_units * 10 + d_units
        if not (1 <= new_month <= 12) or new_day < 1:
            return None
        if new_month == st.month and new_day == st.day:
            return None
        return _replace_valid(st, month=new_month, day=new_day)
    raise ValueError(f"unknown timestamp rule action {action!r}")


def repair_timestamps(stay: PatientStay, config: CleanConfig,
                      audit: list[AuditEntry]) -> None:
    """Repair or drop records whose sample times sit behind a gap > 1 day.

    Field-level rules run first, in catalog order, at most one per record;
    records still more than a day from their entry time afterwards are
    dropped.  Finally, boundary segments isolated by an uncorrectable gap
    are deleted when small (leading < 10 %, trailing < 5 % of records).
    """
    out: list[RawRecord] = []
    for vid, recs in stay.by_variable().items():
        recs = sorted(recs, key=lambda r: (r.enter_time, r.sample_time))
        # gap > 1 day between consecutive sample times flags its neighbours
        flagged = set()
        for i in range(len(recs) - 1):
            if abs(recs[i + 1].sample_time - recs[i].sample_time) > ONE_DAY:
                flagged.add(i)
                flagged.add(i + 1)
        if len(recs) == 1:
            flagged.add(0)
        repaired: list[RawRecord] = []
        for i, rec in enumerate(recs):
            if i in flagged and abs(rec.sample_time - rec.enter_time) > ONE_DAY:
                for rule in config.timestamp_rules:
                    cand = _repair_candidate(rule.action, rec.sample_time, rec.enter_time)
                    if cand is not None and abs(cand - rec.enter_time) <= ONE_DAY:
                        audit.append(AuditEntry(stay.patient_id, vid, rec.sample_time,
                                                "repair-timestamp", rule.rule_id))
                        rec = replace(rec, sample_time=cand)
                        break
                else:
                    audit.append(AuditEntry(stay.patient_id, vid, rec.sample_time,
                                            "delete-timestamp", "ts-unrepairable"))
                    continue
            repaired.append(rec)
        repaired.sort(key=lambda r: (r.sample_time, r.enter_time))
        out.extend(_drop_boundary_segments(stay.patient_id, vid, repaired, config, audit))
    stay.records = out
    stay.sort_records()


def _drop_boundary_segments(patient_id: str, vid: str, recs: list[RawRecord],
                            config: CleanConfig,
                            audit: list[AuditEntry]) -> list[RawRecord]:
    def segments(rs: list[RawRecord]) -> list[list[RawRecord]]:
        segs: list[list[RawRecord]] = [[]]
        for i, r in enumerate(rs):
            if i > 0 and r.sample_time - rs[i - 1].sample_time > ONE_DAY:
                segs.append([])
            segs[-1].append(r)
        return segs

    changed = True
    while changed and recs:
        changed = False
        segs = segments(recs)
        if len(segs) < 2:
            break
        if len(segs[0]) < config.leading_frac * len(recs):
            for r in segs[0]:
                audit.append(AuditEntry(patient_id, vid, r.sample_time,
                                        "delete-timestamp", "ts-delete-before"))
            recs = [r for seg in segs[1:] for r in seg]
            changed = True
            continue
        if len(segs[-1]) < config.trailing_frac * len(recs):
            for r in segs[-1]:
                audit.append(AuditEntry(patient_id, vid, r.sample_time,
                                        "delete-timestamp", "ts-delete-after"))
            recs = [r for seg in segs[:-1] for r in seg]
            changed = True
    return recs


# ---------------------------------------------------------------------------
# Value artefacts
# ---------------------------------------------------------------------------

def remove_range_artefacts(stay: PatientStay, catalog: VariableCatalog,
                           audit: list[AuditEntry]) -> None:
    """Drop records outside their variable's permitted range (bounds inclusive)."""
    kept = []
    for rec in stay.records:
        entry = catalog.get(rec.variable_id)
        bad = ((entry.range_lo is not None and rec.value < entry.range_lo)
               or (entry.range_hi is not None and rec.value > entry.range_hi))
        if bad:
            audit.append(AuditEntry(stay.patient_id, rec.variable_id, rec.sample_time,
                                    "delete-range", "range"))
        else:
            kept.append(rec)
    stay.records = kept


def resolve_duplicates(stay: PatientStay, catalog: VariableCatalog,
                       stats: GlobalStats, audit: list[AuditEntry],
                       dup_std_frac: float = 0.05) -> None:
    """Collapse same-variable records sharing an exact sample time.

    Non-drug variables: identical values keep one copy; small spread
    (sample std below ``dup_std_frac`` of the variable's training std)
    keeps the mean; anything wider is deleted outright.  Drugs:
    zero-status entries are dropped, bolus/tablet doses are summed,
    other duplicates are averaged.
    """
    groups: dict[tuple[str, datetime], list[RawRecord]] = {}
    order: list[tuple[str, datetime]] = []
    for rec in stay.records:
        key = (rec.variable_id, rec.sample_time)
        if key not in groups:
            order.append(key)
        groups.setdefault(key, []).append(rec)

    out: list[RawRecord] = []
    for key in order:
        recs = groups[key]
        if len(recs) == 1:
            out.append(recs[0])
            continue
        vid, _ = key
        entry = catalog.get(vid)
        if entry.kind == "drug":
            out.extend(_resolve_drug_duplicates(stay.patient_id, recs, audit))
        else:
            out.extend(_resolve_plain_duplicates(stay.patient_id, recs, stats,
                                                 dup_std_frac, audit))
    stay.records = out
    stay.sort_records()


def _resolve_plain_duplicates(patient_id: str, recs: list[RawRecord],
                              stats: GlobalStats, dup_std_frac: float,
                              audit: list[AuditEntry]) -> list[RawRecord]:
    values = np.asarray([r.value for r in recs], dtype=np.float64)
    vid = recs[0].variable_id
    if np.all(values == values[0]):
        for r in recs[1:]:
            audit.append(AuditEntry(patient_id, vid, r.sample_time,
                                    "dedupe-identical", "duplicate"))
        return [recs[0]]
    spread = float(values.std(ddof=1))
    limit = dup_std_frac * stats.std.get(vid, 0.0)
    if spread < limit:
        for r in recs[1:]:
            audit.append(AuditEntry(patient_id, vid, r.sample_time,
                                    "dedupe-mean", "duplicate"))
        return [replace(recs[0], value=float(values.mean()))]
    for r in recs:
        audit.append(AuditEntry(patient_id, vid, r.sample_time,
                                "dedupe-conflict", "duplicate"))
    return []


def _resolve_drug_duplicates(patient_id: str, recs: list[RawRecord],
                             audit: list[AuditEntry]) -> list[RawRecord]:
    vid = recs[0].variable_id
    kept = []
    for r in recs:
        if r.status == "zero":
            audit.append(AuditEntry(patient_id, vid, r.sample_time,
                                    "dedupe-zero", "duplicate"))
        else:
            kept.append(r)
    if len(kept) <= 1:
        return kept
    values = np.asarray([r.value for r in kept], dtype=np.float64)
    if all(r.status in ("bolus", "tablet") for r in kept):
        merged = replace(kept[0], value=float(values.sum()))
    else:
        merged = replace(kept[0], value=float(values.mean()))
    for r in kept[1:]:
        audit.append(AuditEntry(patient_id, vid, r.sample_time,
                                "dedupe-mean", "duplicate"))
    return [merged]


def relabel_venous_samples(stay: PatientStay, config: CleanConfig,
                           stats: GlobalStats, audit: list[AuditEntry]) -> None:
    """Relabel arterial blood-gas samples that look venous.

    A blood-gas sample is considered mislabelled when its oxygen saturation
    sits within 10 % of the training saturation std of the nearest central
    venous saturation value.  All arterial analytes drawn at that sample
    time switch to their venous counterparts.
    """
    sat_std = stats.std.get(config.venous_compare)
    if sat_std is None or sat_std <= 0:
        return
    reference = sorted((r for r in stay.records
                        if r.variable_id == config.venous_reference),
                       key=lambda r: r.sample_time)
    if not reference:
        return
    limit = config.venous_frac * sat_std
    window = timedelta(minutes=config.venous_window_min)

    suspect_times = set()
    for rec in stay.records:
        if rec.variable_id != config.venous_compare:
            continue
        nearest = min(reference, key=lambda r: abs(r.sample_time - rec.sample_time))
        if abs(nearest.sample_time - rec.sample_time) > window:
            continue
        if abs(rec.value - nearest.value) < limit:
            suspect_times.add(rec.sample_time)
    if not suspect_times:
        return

    for i, rec in enumerate(stay.records):
        target = config.bloodgas_relabel.get(rec.variable_id)
        if target is not None and rec.sample_time in suspect_times:
            audit.append(AuditEntry(stay.patient_id, rec.variable_id, rec.sample_time,
                                    "relabel-venous", "venous"))
            stay.records[i] = replace(rec, variable_id=target)


def _truncate_to_grid(ts: datetime) -> datetime:
    return ts.replace(minute=ts.minute - ts.minute % 5, second=0, microsecond=0)


def swap_height_weight(stay: PatientStay, config: CleanConfig,
                       audit: list[AuditEntry]) -> None:
    """Swap height/weight entries whose implied BMI is impossible.

    Applies to height and weight records sharing a 5-minute bucket when the
    BMI falls outside [10, 60] but the swapped pair lands inside it.
    """
    heights: dict[datetime, int] = {}
    weights: dict[datetime, int] = {}
    for i, rec in enumerate(stay.records):
        if rec.variable_id == config.height_var:
            heights.setdefault(_truncate_to_grid(rec.sample_time), i)
        elif rec.variable_id == config.weight_var:
            weights.setdefault(_truncate_to_grid(rec.sample_time), i)

    def bmi(height_cm: float, weight_kg: float) -> float:
        if height_cm <= 0:
            return math.inf
        return weight_kg / (height_cm / 100.0) ** 2

    for bucket, hi in heights.items():
        wi = weights.get(bucket)
        if wi is None:
            continue
        h, w = stay.records[hi], stay.records[wi]
        if config.bmi_lo <= bmi(h.value, w.value) <= config.bmi_hi:
            continue
        if config.bmi_lo <= bmi(w.value, h.value) <= config.bmi_hi:
            audit.append(AuditEntry(stay.patient_id, h.variable_id, h.sample_time,
                                    "repair-bmi-swap", "bmi"))
            audit.append(AuditEntry(stay.patient_id, w.variable_id, w.sample_time,
                                    "repair-bmi-swap", "bmi"))
            stay.records[hi] = replace(h, value=w.value)
            stay.records[wi] = replace(w, value=h.value)


# ---------------------------------------------------------------------------
# Drug dose -> rate conversion
# ---------------------------------------------------------------------------

def _step_value(times: list[datetime], values: list[float], t: datetime) -> float:
    """Value of a step function defined by breakpoints, 0 before the first."""
    lo, hi = 0, len(times)
    while lo < hi:
        mid = (lo + hi) // 2
        if times[mid] <= t:
            lo = mid + 1
        else:
            hi = mid
    return values[lo - 1] if lo else 0.0


def pharma_to_rates(stay: PatientStay, catalog: VariableCatalog,
                    audit: list[AuditEntry]) -> None:
    """Convert drug records into piecewise-constant rate breakpoints.

    Boluses and tablets spread their dose evenly over the variable's acting
    period; infusion records give the running rate until the next record.
    Overlapping contributions add.  The emitted breakpoints reconstruct the
    combined rate exactly, so dose mass is conserved.
    """
    by_var = stay.by_variable()
    out: list[RawRecord] = []
    for vid, recs in by_var.items():
        entry = catalog.get(vid)
        if entry.kind != "drug":
            out.extend(recs)
            continue
        recs = sorted(recs, key=lambda r: (r.sample_time, r.enter_time))
        acting = timedelta(minutes=float(entry.acting_period_min))
        inf_times: list[datetime] = []
        inf_values: list[float] = []
        bolus_edges: list[tuple[datetime, float]] = []
        for r in recs:
            if r.status in ("bolus", "tablet"):
                rate = r.value / float(entry.acting_period_min)
                bolus_edges.append((r.sample_time, rate))
                bolus_edges.append((r.sample_time + acting, -rate))
                audit.append(AuditEntry(stay.patient_id, vid, r.sample_time,
                                        "pharma-rate", "pharma"))
            elif r.status == "zero":
                inf_times.append(r.sample_time)
                inf_values.append(0.0)
            else:  # infusion or plain: the record value is the running rate
                inf_times.append(r.sample_time)
                inf_values.append(r.value)

        change_points = sorted({t for t, _ in bolus_edges} | set(inf_times))
        if not change_points:
            continue
        bolus_edges.sort(key=lambda e: e[0])
        emitted: list[RawRecord] = []
        last_rate = None
        edge_idx = 0
        bolus_level = 0.0
        for t in change_points:
            while edge_idx < len(bolus_edges) and bolus_edges[edge_idx][0] <= t:
                bolus_level += bolus_edges[edge_idx][1]
                edge_idx += 1
            rate = bolus_level + _step_value(inf_times, inf_values, t)
            if last_rate is not None and rate == last_rate:
                continue
            if last_rate is None and rate == 0.0:
                continue
            emitted.append(RawRecord(variable_id=vid, sample_time=t, enter_time=t,
                                     value=rate, status="infusion"))
            last_rate = rate
        out.extend(emitted)
    stay.records = out
    stay.sort_records()


# ---------------------------------------------------------------------------
# Merge-group consolidation
# ---------------------------------------------------------------------------

def merge_variables(stay: PatientStay, catalog: VariableCatalog,
                    audit: list[AuditEntry]) -> None:
    """Collapse each merge group onto its target variable.

    Physiological and lab values take the median of simultaneous entries
    (same 5-minute bucket).  Drug rates take the weight-scaled sum of the
    member step functions, evaluated at every breakpoint so the combined
    rate is conserved at every instant.  Binary indicator groups emit
    presence, or the active-member count when the group id carries a
    ``#count`` suffix.
    """
    groups = catalog.merge_groups()
    if not groups:
        return
    member_to_group = {vid: g for g, members in groups.items() for vid in members}
    by_var = stay.by_variable()
    untouched = [r for r in stay.records if r.variable_id not in member_to_group]
    merged: list[RawRecord] = []
    for group, members in groups.items():
        target = group.split("#", 1)[0]
        count_mode = group.endswith("#count")
        present = [m for m in members if m in by_var]
        if not present:
            continue
        kind = catalog.get(members[0]).kind
        if kind in ("continuous", "categorical"):
            merged.extend(_merge_point_values(stay.patient_id, target, present,
                                              by_var, audit))
        elif kind == "drug":
            weights = {m: (catalog.get(m).merge_weight
                           if catalog.get(m).merge_weight is not None else 1.0)
                       for m in present}
            merged.extend(_merge_step_functions(
                stay.patient_id, target, present, by_var, weights,
                value_of=lambda r: r.value, combine="sum", audit=audit))
        else:  # binary indicator groups
            merged.extend(_merge_step_functions(
                stay.patient_id, target, present, by_var,
                {m: 1.0 for m in present},
                value_of=lambda r: 1.0 if r.value > 0 else 0.0,
                combine="count" if count_mode else "any", audit=audit))
    stay.records = untouched + merged
    stay.sort_records()


def _merge_point_values(patient_id: str, target: str, members: list[str],
                        by_var: dict[str, list[RawRecord]],
                        audit: list[AuditEntry]) -> list[RawRecord]:
    buckets: dict[datetime, list[RawRecord]] = {}
    for m in members:
        for r in by_var[m]:
            buckets.setdefault(_truncate_to_grid(r.sample_time), []).append(r)
    out = []
    for bucket in sorted(buckets):
        recs = buckets[bucket]
        value = float(np.median([r.value for r in recs]))
        for r in recs[1:]:
            audit.append(AuditEntry(patient_id, r.variable_id, r.sample_time,
                                    "merge", "merge"))
        out.append(RawRecord(variable_id=target, sample_time=bucket,
                             enter_time=min(r.enter_time for r in recs),
                             value=value, status="plain"))
    return out


def _merge_step_functions(patient_id: str, target: str, members: list[str],
                          by_var: dict[str, list[RawRecord]],
                          weights: dict[str, float], value_of, combine: str,
                          audit: list[AuditEntry]) -> list[RawRecord]:
    steps: dict[str, tuple[list[datetime], list[float]]] = {}
    change_points: set[datetime] = set()
    for m in members:
        recs = sorted(by_var[m], key=lambda r: r.sample_time)
        steps[m] = ([r.sample_time for r in recs], [value_of(r) for r in recs])
        change_points.update(r.sample_time for r in recs)
        if len(members) > 1:
            for r in recs:
                audit.append(AuditEntry(patient_id, m, r.sample_time, "merge", "merge"))
    out = []
    last = None
    for t in sorted(change_points):
        levels = [weights[m] * _step_value(steps[m][0], steps[m][1], t) for m in members]
        if combine == "sum":
            value = float(sum(levels))
        elif combine == "count":
            value = float(sum(1 for v in levels if v > 0))
        else:
            value = 1.0 if any(v > 0 for v in levels) else 0.0
        if last is not None and value == last:
            continue
        if last is None and value == 0.0:
            continue
        out.append(RawRecord(variable_id=target, sample_time=t, enter_time=t,
                             value=value, status="infusion"))
        last = value
    return out


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------

def clean_stay_structural(stay: PatientStay, catalog: VariableCatalog,
                          config: CleanConfig, audit: list[AuditEntry]) -> None:
    """Stats-free first pass: timestamp repair and range deletion."""
    repair_timestamps(stay, config, audit)
    remove_range_artefacts(stay, catalog, audit)


def clean_stay_statistical(stay: PatientStay, catalog: VariableCatalog,
                           config: CleanConfig, stats: GlobalStats,
                           audit: list[AuditEntry]) -> None:
    """Second pass: rules that need training-cohort statistics, then
    dose-to-rate conversion and merge-group consolidation."""
    resolve_duplicates(stay, catalog, stats, audit, config.dup_std_frac)
    relabel_venous_samples(stay, config, stats, audit)
    swap_height_weight(stay, config, audit)
    pharma_to_rates(stay, catalog, audit)
    merge_variables(stay, catalog, audit)


def clean_cohort(stays: dict[str, PatientStay], catalog: VariableCatalog,
                 config: CleanConfig,
                 train_ids: list[str] | None = None,
                 ) -> tuple[GlobalStats, list[AuditEntry]]:
    """Clean every stay in place; statistics come from ``train_ids`` only
    (the whole cohort when not given)."""
    audit: list[AuditEntry] = []
    for pid in sorted(stays):
        clean_stay_structural(stays[pid], catalog, config, audit)
    pool = sorted(stays) if train_ids is None else sorted(train_ids)
    stats = compute_global_stats([stays[pid] for pid in pool if pid in stays])
    for pid in sorted(stays):
        clean_stay_statistical(stays[pid], catalog, config, stats, audit)
    return stats, audit


def write_global_stats(stats: GlobalStats, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable_id", "mean", "std", "count"])
        for vid in sorted(stats.std):
            writer.writerow([vid, format_float(stats.mean[vid]),
                             format_float(stats.std[vid]), stats.count[vid]])


def load_global_stats(path: str) -> GlobalStats:
    stats = GlobalStats()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            vid = row["variable_id"]
            stats.mean[vid] = float(row["mean"])
            stats.std[vid] = float(row["std"])
            stats.count[vid] = int(row["count"])
    return stats
