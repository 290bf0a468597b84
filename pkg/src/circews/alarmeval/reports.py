"""Report tables breaking alarm quality down by context.

Everything lands in small CSV files: recall as the minimum required lead
grows, the lead of the first alarm per caught episode, recall/precision
by patient strata, and recall by time since admission, episode duration
and spacing.  Strata with no events and no alarms are left out of the
tables and listed in summary.csv instead.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from .. import core
from .metrics import EvalParams, classify_alarm, event_caught

LEAD_WINDOW_MIN = 30.0

APACHE_SCORE_BANDS = ((0.0, 15.0), (15.0, 30.0), (30.0, float("inf")))
AGE_BANDS = ((0.0, 40.0), (40.0, 65.0), (65.0, float("inf")))
ADMISSION_BANDS_H = ((0.0, 12.0), (12.0, 24.0), (24.0, 48.0), (48.0, 96.0),
                     (96.0, float("inf")))
DURATION_BANDS_MIN = ((0.0, 30.0), (30.0, 60.0), (60.0, 120.0),
                      (120.0, 240.0), (240.0, float("inf")))
GAP_BANDS_H = ((0.0, 6.0), (6.0, 12.0), (12.0, 24.0), (24.0, float("inf")))


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([core.format_float(v) if isinstance(v, float) else v
                             for v in row])


def _band_label(lo: float, hi: float, unit: str) -> str:
    if np.isinf(hi):
        return f">{lo:g}{unit}"
    return f"({lo:g},{hi:g}]{unit}"


def _recall_of(onsets: list[tuple[str, float]],
               alarms: dict[str, np.ndarray], params: EvalParams,
               ) -> tuple[int, int]:
    caught = 0
    for pid, onset in onsets:
        if event_caught(onset, alarms.get(pid, np.empty(0)), params):
            caught += 1
    return caught, len(onsets)


def write_reports(outdir: str, alarms: dict[str, np.ndarray],
                  events: dict[str, list[tuple[float, float]]],
                  statics: dict[str, core.PatientStatics],
                  grid_offset_min: dict[str, float],
                  params: EvalParams) -> None:
    """alarms/events hold minutes on each stay's grid clock;
    grid_offset_min maps patient to minutes from admission to grid start."""
    os.makedirs(outdir, exist_ok=True)
    notes: list[str] = []
    all_onsets = [(pid, s) for pid in sorted(events) for s, _ in events[pid]]

    # recall as the minimum accepted lead grows
    rows = []
    t = 0.0
    while t < params.horizon_min:
        shifted = EvalParams(min_lead_min=t if t > 0 else params.min_lead_min,
                             horizon_min=params.horizon_min)
        caught, total = _recall_of(all_onsets, alarms, shifted)
        rows.append([t, caught, total, caught / total if total else 1.0])
        t += LEAD_WINDOW_MIN
    _write_csv(os.path.join(outdir, "lead_recall.csv"),
               ["min_lead_min", "n_caught", "n_events", "recall"], rows)

    # lead of the first alarm per caught episode
    leads = []
    for pid, onset in all_onsets:
        lead = onset - np.asarray(alarms.get(pid, ()), dtype=np.float64)
        valid = lead[(lead >= params.min_lead_min) & (lead <= params.horizon_min)]
        if valid.size:
            leads.append(float(valid.max()))
    hist_rows = []
    lo = 0.0
    while lo < params.horizon_min:
        hi = lo + LEAD_WINDOW_MIN
        count = sum(1 for v in leads if lo < v <= hi)
        hist_rows.append([_band_label(lo, hi, "min"), count])
        lo = hi
    _write_csv(os.path.join(outdir, "first_alarm_lead.csv"),
               ["lead_band", "n_events"], hist_rows)
    mean_lead = float(np.mean(leads)) if leads else float("nan")

    # strata
    def facet_of(pid: str, facet: str) -> str:
        st = statics[pid]
        if facet == "apache_group":
            return st.apache_group or "<missing>"
        if facet == "apache_score":
            score = st.apache_score
            if score is None:
                return "<missing>"
            for lo_b, hi_b in APACHE_SCORE_BANDS:
                if lo_b < score <= hi_b or (lo_b == 0.0 and score <= hi_b):
                    return _band_label(lo_b, hi_b, "")
            return "<missing>"
        if facet == "age":
            age = st.age
            if age is None:
                return "<missing>"
            for lo_b, hi_b in AGE_BANDS:
                if lo_b < age <= hi_b or (lo_b == 0.0 and age <= hi_b):
                    return _band_label(lo_b, hi_b, "y")
            return "<missing>"
        if facet == "sex":
            return st.sex or "<missing>"
        if facet == "emergency":
            return str(st.emergency if st.emergency is not None else "<missing>")
        return str(st.surgical if st.surgical is not None else "<missing>")

    strata_rows = []
    pids = sorted(set(list(alarms) + list(events)))
    for facet in ("apache_group", "apache_score", "age", "sex", "emergency",
                  "surgical"):
        groups = sorted({facet_of(p, facet) for p in pids})
        for label in groups:
            members = [p for p in pids if facet_of(p, facet) == label]
            onsets = [(p, s) for p in members for s, _ in events.get(p, ())]
            caught, total = _recall_of(onsets, alarms, params)
            n_alarms = n_tp = 0
            for p in members:
                onset_arr = np.asarray([s for s, _ in events.get(p, ())])
                for ta in alarms.get(p, ()):
                    n_alarms += 1
                    if classify_alarm(float(ta), onset_arr, params) == "tp":
                        n_tp += 1
            if total == 0 and n_alarms == 0:
                notes.append(f"stratum {facet}={label}: no events or alarms")
                continue
            strata_rows.append([
                facet, label, total, caught,
                caught / total if total else 1.0,
                n_alarms, n_tp, n_tp / n_alarms if n_alarms else 1.0])
    _write_csv(os.path.join(outdir, "strata.csv"),
               ["facet", "stratum", "n_events", "n_caught", "recall",
                "n_alarms", "n_tp", "precision"], strata_rows)

    # recall by time since admission
    adm_rows = []
    for lo_h, hi_h in ADMISSION_BANDS_H:
        onsets = [(p, s) for p, s in all_onsets
                  if lo_h * 60 < s + grid_offset_min[p] <= hi_h * 60
                  or (lo_h == 0.0 and s + grid_offset_min[p] <= hi_h * 60)]
        caught, total = _recall_of(onsets, alarms, params)
        cum = [(p, s) for p, s in all_onsets
               if s + grid_offset_min[p] <= hi_h * 60]
        cum_caught, cum_total = _recall_of(cum, alarms, params)
        if total == 0:
            notes.append(f"admission band {_band_label(lo_h, hi_h, 'h')}: no events")
            continue
        adm_rows.append([
            _band_label(lo_h, hi_h, "h"), total, caught / total,
            cum_total, cum_caught / cum_total if cum_total else 1.0])
    _write_csv(os.path.join(outdir, "admission_recall.csv"),
               ["band", "n_events", "recall", "n_events_cum", "recall_cum"],
               adm_rows)

    # recall by episode duration
    dur_rows = []
    for lo_m, hi_m in DURATION_BANDS_MIN:
        onsets = [(p, s) for p in sorted(events) for s, e in events[p]
                  if lo_m < e - s + core.GRID_STEP_MIN <= hi_m
                  or (lo_m == 0.0 and e - s + core.GRID_STEP_MIN <= hi_m)]
        caught, total = _recall_of(onsets, alarms, params)
        if total == 0:
            notes.append(f"duration band {_band_label(lo_m, hi_m, 'min')}: no events")
            continue
        dur_rows.append([_band_label(lo_m, hi_m, "min"), total, caught / total])
    _write_csv(os.path.join(outdir, "duration_recall.csv"),
               ["band", "n_events", "recall"], dur_rows)

    # recall by spacing from the previous episode
    gap_rows = []
    first_onsets, spaced = [], {b: [] for b in GAP_BANDS_H}
    for pid in sorted(events):
        ordered = sorted(events[pid])
        for k, (s, _) in enumerate(ordered):
            if k == 0:
                first_onsets.append((pid, s))
                continue
            gap_h = (s - ordered[k - 1][1]) / 60.0
            for lo_h, hi_h in GAP_BANDS_H:
                if lo_h < gap_h <= hi_h or (lo_h == 0.0 and gap_h <= hi_h):
                    spaced[(lo_h, hi_h)].append((pid, s))
                    break
    caught, total = _recall_of(first_onsets, alarms, params)
    if total:
        gap_rows.append(["first", total, caught / total])
    for band in GAP_BANDS_H:
        caught, total = _recall_of(spaced[band], alarms, params)
        if total == 0:
            notes.append(f"gap band {_band_label(*band, 'h')}: no events")
            continue
        gap_rows.append([_band_label(*band, "h"), total, caught / total])
    _write_csv(os.path.join(outdir, "gap_recall.csv"),
               ["band", "n_events", "recall"], gap_rows)

    summary = [["mean_first_alarm_lead_min", mean_lead]]
    summary.extend(["note", n] for n in notes)
    _write_csv(os.path.join(outdir, "summary.csv"), ["key", "value"], summary)
