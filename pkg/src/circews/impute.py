"""Resampling of cleaned stays onto a 5-minute grid with adaptive imputation.

Each variable's typical sampling interval (median m and IQR, pooled over the
training cohort) drives a three-regime scheme at every grid point: catalog
default before the first measurement, forward fill while the time since the
last measurement stays below m + IQR, then a linear return over
2*(m + 2*IQR) minutes from the last value to the trailing median, held
constant afterwards.  Values never depend on measurements after the grid
point.  Drug and binary channels are step functions sampled directly.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from datetime import timedelta

import numpy as np

from .core import (
    GRID_STEP_MIN, DataError, GridStay, PatientStatics, PatientStay,
    VariableCatalog, minutes_since, save_npz,
)

logger = logging.getLogger(__name__)

#: (median, IQR) fallbacks in minutes when a variable has fewer than
#: 5 observed intervals in the training cohort
INTERVAL_FALLBACKS = {
    "high": (5.0, 5.0),
    "medium": (240.0, 240.0),
    "low": (960.0, 480.0),
}

MAX_GRID_POINTS = 8064  # 28 days of 5-minute steps
MIN_INTERVALS = 5


@dataclass
class ImputeConfig:
    hr_var: str = "hr"
    max_stay_days: float = 28.0


@dataclass
class ImputationParams:
    """Sampling-interval statistics and static fills, fitted on training data."""

    interval_median: dict[str, float] = field(default_factory=dict)
    interval_iqr: dict[str, float] = field(default_factory=dict)
    n_intervals: dict[str, int] = field(default_factory=dict)
    static_mean: dict[str, float] = field(default_factory=dict)
    static_mode: dict[str, str] = field(default_factory=dict)

    def interval_stats(self, variable_id: str, catalog: VariableCatalog,
                       ) -> tuple[float, float]:
        if self.n_intervals.get(variable_id, 0) >= MIN_INTERVALS:
            return self.interval_median[variable_id], self.interval_iqr[variable_id]
        return INTERVAL_FALLBACKS[catalog.get(variable_id).freq_class]

    def to_json(self) -> str:
        return json.dumps({
            "interval_median": self.interval_median,
            "interval_iqr": self.interval_iqr,
            "n_intervals": self.n_intervals,
            "static_mean": self.static_mean,
            "static_mode": self.static_mode,
        }, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ImputationParams":
        raw = json.loads(text)
        return cls(**{k: raw[k] for k in (
            "interval_median", "interval_iqr", "n_intervals",
            "static_mean", "static_mode")})


def grid_variable_ids(catalog: VariableCatalog) -> list[str]:
    """Variables present on the imputed grid: everything that is not a
    merge-group member (members were consolidated onto their targets)."""
    return [e.variable_id for e in catalog if e.merge_group is None]


def fit_imputation_params(stays: list[PatientStay],
                          catalog: VariableCatalog) -> ImputationParams:
    """Pool per-patient sampling intervals and static summaries over a
    training cohort."""
    if not stays:
        raise DataError("cannot fit imputation parameters on an empty cohort")
    intervals: dict[str, list[float]] = {}
    for stay in stays:
        for vid, recs in stay.by_variable().items():
            if vid not in catalog:
                continue
            if catalog.get(vid).kind not in ("continuous", "categorical"):
                continue
            times = sorted(r.sample_time for r in recs)
            bucket = intervals.setdefault(vid, [])
            for a, b in zip(times, times[1:]):
                bucket.append((b - a).total_seconds() / 60.0)

    params = ImputationParams()
    for vid, vals in intervals.items():
        arr = np.asarray(vals, dtype=np.float64)
        params.n_intervals[vid] = int(arr.size)
        if arr.size:
            q25, q50, q75 = np.quantile(arr, [0.25, 0.5, 0.75])
            params.interval_median[vid] = float(q50)
            params.interval_iqr[vid] = float(q75 - q25)

    _fit_static_fills(params, [s.statics for s in stays])
    return params


def _fit_static_fills(params: ImputationParams,
                      statics: list[PatientStatics]) -> None:
    for name in ("age", "height_cm", "apache_score"):
        vals = [getattr(s, name) for s in statics if getattr(s, name) is not None]
        params.static_mean[name] = float(np.mean(vals)) if vals else 0.0
    for name in ("sex", "apache_group", "emergency", "surgical", "mortality"):
        vals = [getattr(s, name) for s in statics if getattr(s, name) is not None]
        if vals:
            counts: dict[str, int] = {}
            for v in vals:
                counts[str(v)] = counts.get(str(v), 0) + 1
            best = max(sorted(counts), key=lambda k: counts[k])
            params.static_mode[name] = best
        else:
            params.static_mode[name] = ""


def impute_statics(statics: PatientStatics, params: ImputationParams) -> PatientStatics:
    """Fill missing static fields with training means (continuous) / modes."""
    out = PatientStatics(**vars(statics))
    for name in ("age", "height_cm", "apache_score"):
        if getattr(out, name) is None:
            setattr(out, name, params.static_mean.get(name, 0.0))
    if out.sex is None:
        out.sex = params.static_mode.get("sex") or "F"
    if out.apache_group is None:
        out.apache_group = params.static_mode.get("apache_group") or "other"
    for name in ("emergency", "surgical", "mortality"):
        if getattr(out, name) is None:
            mode = params.static_mode.get(name) or "0"
            setattr(out, name, int(mode))
    return out


# ---------------------------------------------------------------------------
# Grid imputation
# ---------------------------------------------------------------------------

def impute_stay(stay: PatientStay, catalog: VariableCatalog,
                params: ImputationParams,
                config: ImputeConfig | None = None) -> GridStay | None:
    """Impute one cleaned stay onto the 5-minute grid.

    The grid is anchored at the first heart-rate measurement and ends at the
    last one, or 28 days after admission, whichever comes first.  Returns
    None (logged) when the stay has no heart-rate data at all.
    """
    config = config or ImputeConfig()
    by_var = stay.by_variable()
    hr_recs = by_var.get(config.hr_var)
    if not hr_recs:
        logger.warning("stay %s has no %r measurements; excluded",
                       stay.patient_id, config.hr_var)
        return None
    grid_start = min(r.sample_time for r in hr_recs)
    hard_end = stay.admission_time + timedelta(days=config.max_stay_days)
    grid_end = min(max(r.sample_time for r in hr_recs), hard_end)
    span_min = max(0.0, minutes_since(grid_end, grid_start))
    n_points = min(int(span_min // GRID_STEP_MIN) + 1, MAX_GRID_POINTS)

    variables = grid_variable_ids(catalog)
    values = np.empty((len(variables), n_points), dtype=np.float64)
    measured = np.zeros((len(variables), n_points), dtype=bool)

    for vi, vid in enumerate(variables):
        entry = catalog.get(vid)
        recs = sorted(by_var.get(vid, []), key=lambda r: (r.sample_time, r.enter_time))
        times = np.asarray([minutes_since(r.sample_time, grid_start) for r in recs])
        vals = np.asarray([r.value for r in recs], dtype=np.float64)
        if entry.kind in ("drug", "binary"):
            _impute_step_channel(values[vi], measured[vi], times, vals, entry.default)
        else:
            m, iqr = params.interval_stats(vid, catalog)
            _impute_adaptive_channel(values[vi], measured[vi], times, vals,
                                     entry.default, m, iqr)
    return GridStay(patient_id=stay.patient_id,
                    admission_time=stay.admission_time,
                    grid_start=grid_start, variables=variables,
                    values=values, measured=measured)


def _assign_measured(measured: np.ndarray, times: np.ndarray) -> None:
    n = measured.shape[0]
    idx = np.floor(times / GRID_STEP_MIN).astype(np.int64)
    ok = (idx >= 0) & (idx < n) & (times >= 0)
    measured[idx[ok]] = True


def _impute_step_channel(out: np.ndarray, measured: np.ndarray,
                         times: np.ndarray, vals: np.ndarray,
                         default: float) -> None:
    """Sample a piecewise-constant channel (drug rates, binary flags)."""
    n = out.shape[0]
    grid_t = np.arange(n, dtype=np.float64) * GRID_STEP_MIN
    if times.size == 0:
        out[:] = default
        return
    # a measurement is known from the grid point of its own bucket onwards
    pos = np.searchsorted(times, grid_t + GRID_STEP_MIN, side="left") - 1
    out[:] = np.where(pos >= 0, vals[np.clip(pos, 0, None)], default)
    _assign_measured(measured, times)


def _impute_adaptive_channel(out: np.ndarray, measured: np.ndarray,
                             times: np.ndarray, vals: np.ndarray,
                             default: float, m: float, iqr: float) -> None:
    n = out.shape[0]
    if times.size == 0:
        out[:] = default
        return
    ffill_limit = m + iqr
    return_span = 2.0 * (m + 2.0 * iqr)

    # grid index from which measurement j is the latest known one
    start_idx = np.maximum(np.floor(times / GRID_STEP_MIN).astype(np.int64), 0)
    out[:min(start_idx[0], n)] = default

    for j in range(times.size):
        seg_from = start_idx[j]
        seg_to = start_idx[j + 1] if j + 1 < times.size else n
        if seg_from >= n or seg_to <= seg_from:
            continue
        seg_to = min(seg_to, n)
        t_last, v_last = times[j], vals[j]
        grid_t = np.arange(seg_from, seg_to, dtype=np.float64) * GRID_STEP_MIN
        gaps = np.maximum(grid_t - t_last, 0.0)
        seg = np.full(seg_to - seg_from, v_last)
        # publish the forward fill before taking the trailing median, so the
        # return target sees imputed values rather than unwritten memory
        out[seg_from:seg_to] = seg
        in_return = gaps >= ffill_limit
        if np.any(in_return) and return_span > 0:
            k_enter = seg_from + int(np.argmax(in_return))
            t_enter = k_enter * GRID_STEP_MIN
            lo = max(0, int(math.ceil((t_enter - return_span) / GRID_STEP_MIN)))
            window = out[lo:k_enter]
            target = float(np.median(window)) if window.size else v_last
            frac = np.minimum((grid_t[in_return] - t_enter) / return_span, 1.0)
            seg[in_return] = v_last + (target - v_last) * frac
        out[seg_from:seg_to] = seg
    _assign_measured(measured, times)


# ---------------------------------------------------------------------------
# Cohort-level helpers and persistence
# ---------------------------------------------------------------------------

def impute_cohort(stays: dict[str, PatientStay], catalog: VariableCatalog,
                  params: ImputationParams,
                  config: ImputeConfig | None = None) -> dict[str, GridStay]:
    grids = {}
    for pid in sorted(stays):
        grid = impute_stay(stays[pid], catalog, params, config)
        if grid is not None:
            grids[pid] = grid
    return grids


def save_grids(grids: dict[str, GridStay], path: str) -> None:
    if not grids:
        raise DataError("no grids to save")
    first = next(iter(grids.values()))
    meta = {
        "variables": first.variables,
        "patients": {
            pid: {
                "admission_time": g.admission_time.isoformat(timespec="seconds"),
                "grid_start": g.grid_start.isoformat(timespec="seconds"),
            } for pid, g in sorted(grids.items())
        },
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(),
                                    dtype=np.uint8)}
    for pid in sorted(grids):
        arrays[f"values__{pid}"] = grids[pid].values
        arrays[f"measured__{pid}"] = grids[pid].measured
    save_npz(path, arrays)


def load_grids(path: str) -> dict[str, GridStay]:
    from datetime import datetime

    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        grids = {}
        for pid, info in meta["patients"].items():
            grids[pid] = GridStay(
                patient_id=pid,
                admission_time=datetime.fromisoformat(info["admission_time"]),
                grid_start=datetime.fromisoformat(info["grid_start"]),
                variables=list(meta["variables"]),
                values=data[f"values__{pid}"],
                measured=data[f"measured__{pid}"],
            )
    return grids
