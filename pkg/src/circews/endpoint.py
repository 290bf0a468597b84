"""Circulatory-failure state annotation, event extraction and labelling.

A grid point is in failure when, inside the 45-minute window centred on it,
both of these hold for at least 30 of the 45 minutes (six of the nine
5-minute points, not necessarily consecutive): mean arterial pressure at or
below 65 mmHg or a vasoactive/inotropic agent running, and lactate at or
above 2 mmol/L.  It is stable when pressure above 65, no such agent, and
lactate at or below 2 each hold for 30 minutes.  Anything else - including
windows without usable lactate - is ambiguous.

Lactate between measurements is linearly interpolated unless the two
neighbours straddle the threshold and lie six hours or more apart, in which
case each side is held for at most three hours and the middle stays
missing.  Boundary values extend outward indefinitely when normal, three
hours when not.  This estimate may look ahead, so it is used only for
annotation, never for model inputs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import GRID_STEP_MIN, GridStay, PatientStay, minutes_since

STABLE = 0
FAILURE = 1
AMBIGUOUS = 2

LABEL_POS = 1
LABEL_NEG = 0
LABEL_NONE = -1

EVENT_COLUMNS = ["patient_id", "event_start", "event_end"]


@dataclass
class EndpointConfig:
    map_var: str = "map"
    lactate_vars: tuple[str, ...] = ("lac", "lac_art", "lac_ven")
    drug_vars: tuple[str, ...] = (
        "norepinephrine", "epinephrine", "dobutamine", "milrinone",
        "levosimendan", "theophylline", "vasopressin",
    )
    map_threshold: float = 65.0
    lactate_threshold: float = 2.0
    window_min: float = 45.0
    required_min: float = 30.0
    crossing_limit_min: float = 360.0
    boundary_fill_min: float = 180.0
    label_horizon_steps: int = 96

    @property
    def window_pts(self) -> int:
        return int(round(self.window_min / GRID_STEP_MIN))

    @property
    def required_pts(self) -> int:
        return int(np.ceil(self.required_min / GRID_STEP_MIN))


def pooled_lactate(stay: PatientStay, grid_start, config: EndpointConfig,
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Arterial and venous lactate measurements pooled into one series of
    (minutes since grid start, value), averaging simultaneous draws."""
    wanted = set(config.lactate_vars)
    points: dict[float, list[float]] = {}
    for rec in stay.records:
        if rec.variable_id in wanted:
            t = minutes_since(rec.sample_time, grid_start)
            points.setdefault(t, []).append(rec.value)
    times = np.asarray(sorted(points), dtype=np.float64)
    values = np.asarray([np.mean(points[t]) for t in times], dtype=np.float64)
    return times, values


def estimate_lactate(times: np.ndarray, values: np.ndarray,
                     grid_minutes: np.ndarray, config: EndpointConfig,
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Annotation-time lactate estimate at each grid minute.

    Returns (estimate, available); the estimate is undefined where
    ``available`` is False.
    """
    n = grid_minutes.shape[0]
    est = np.full(n, np.nan)
    avail = np.zeros(n, dtype=bool)
    if times.size == 0:
        return est, avail
    thr = config.lactate_threshold
    fill = config.boundary_fill_min

    # before the first and after the last measurement; inclusive bounds so
    # a grid minute coinciding with a lone measurement is still covered
    # (interior segments run later and overwrite the shared endpoints)
    left = grid_minutes <= times[0]
    right = grid_minutes >= times[-1]
    if values[0] < thr:
        est[left], avail[left] = values[0], True
    else:
        ok = left & (grid_minutes >= times[0] - fill)
        est[ok], avail[ok] = values[0], True
    if values[-1] < thr:
        est[right], avail[right] = values[-1], True
    else:
        ok = right & (grid_minutes <= times[-1] + fill)
        est[ok], avail[ok] = values[-1], True

    for (ta, va), (tb, vb) in zip(zip(times, values), zip(times[1:], values[1:])):
        span = (grid_minutes >= ta) & (grid_minutes <= tb)
        if not np.any(span):
            continue
        crossing = (va - thr) * (vb - thr) < 0
        if not crossing or tb - ta < config.crossing_limit_min:
            if tb > ta:
                frac = (grid_minutes[span] - ta) / (tb - ta)
            else:
                frac = np.zeros(int(span.sum()))
            est[span] = va + (vb - va) * frac
            avail[span] = True
        else:
            head = span & (grid_minutes <= ta + fill)
            tail = span & (grid_minutes >= tb - fill)
            est[head], avail[head] = va, True
            est[tail], avail[tail] = vb, True
    return est, avail


def _windowed_count(cond: np.ndarray, window_pts: int) -> np.ndarray:
    """Count of True inside the centred window, truncated at the edges."""
    half = window_pts // 2
    csum = np.concatenate([[0], np.cumsum(cond.astype(np.int64))])
    n = cond.shape[0]
    idx = np.arange(n)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half, n - 1)
    return csum[hi + 1] - csum[lo]


def annotate_stay(grid: GridStay, lactate_times: np.ndarray,
                  lactate_values: np.ndarray,
                  config: EndpointConfig | None = None) -> np.ndarray:
    """Attach per-grid-point circulatory states to the stay and return them."""
    config = config or EndpointConfig()
    n = grid.n_points
    grid_minutes = grid.grid_minutes()

    map_idx = grid.index_of(config.map_var)
    map_vals = grid.values[map_idx]
    map_available = bool(grid.measured[map_idx].any())

    drug_on = np.zeros(n, dtype=bool)
    for vid in config.drug_vars:
        if vid in grid.variables:
            drug_on |= grid.channel(vid) > 0

    lac_est, lac_avail = estimate_lactate(lactate_times, lactate_values,
                                          grid_minutes, config)
    lac_hi = lac_avail & (lac_est >= config.lactate_threshold)
    lac_lo = lac_avail & (lac_est <= config.lactate_threshold)
    map_low = map_vals <= config.map_threshold
    circ = map_low | drug_on
    map_ok = ~map_low
    no_drug = ~drug_on

    need, win = config.required_pts, config.window_pts
    failure = ((_windowed_count(circ, win) >= need)
               & (_windowed_count(lac_hi, win) >= need))
    stable = ((_windowed_count(map_ok, win) >= need)
              & (_windowed_count(no_drug, win) >= need)
              & (_windowed_count(lac_lo, win) >= need))

    states = np.full(n, AMBIGUOUS, dtype=np.int8)
    if map_available:
        states[stable] = STABLE
        states[failure] = FAILURE  # failure wins if both qualify
    grid.states = states
    return states


def derive_labels(states: np.ndarray, horizon_steps: int) -> np.ndarray:
    """Per-point labels: at stable points, positive when failure occurs in
    the next ``horizon_steps`` grid steps, negative when all of them exist
    and are determinable without failure, unlabeled otherwise."""
    n = states.shape[0]
    labels = np.full(n, LABEL_NONE, dtype=np.int8)
    fail_csum = np.concatenate([[0], np.cumsum(states == FAILURE)])
    ambi_csum = np.concatenate([[0], np.cumsum(states == AMBIGUOUS)])
    for i in np.flatnonzero(states == STABLE):
        lo = i + 1
        hi = min(i + horizon_steps, n - 1)
        if lo > hi:
            continue
        if fail_csum[hi + 1] - fail_csum[lo] > 0:
            labels[i] = LABEL_POS
        elif i + horizon_steps <= n - 1 and ambi_csum[hi + 1] - ambi_csum[lo] == 0:
            labels[i] = LABEL_NEG
    return labels


def extract_events(states: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of failure points as (start, end) inclusive grid indices."""
    fail = np.asarray(states) == FAILURE
    if not fail.any():
        return []
    padded = np.concatenate([[False], fail, [False]]).astype(np.int8)
    diff = np.diff(padded)
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def annotate_cohort(grids: dict[str, GridStay], stays: dict[str, PatientStay],
                    config: EndpointConfig | None = None,
                    ) -> dict[str, list[tuple[int, int]]]:
    """Annotate every grid in place; returns each patient's events."""
    config = config or EndpointConfig()
    events = {}
    for pid in sorted(grids):
        grid = grids[pid]
        times, values = pooled_lactate(stays[pid], grid.grid_start, config)
        states = annotate_stay(grid, times, values, config)
        grid.labels = derive_labels(states, config.label_horizon_steps)
        events[pid] = extract_events(states)
    return events


def write_events(events: dict[str, list[tuple[int, int]]], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVENT_COLUMNS)
        for pid in sorted(events):
            for start, end in events[pid]:
                writer.writerow([pid, start, end])


def load_events(path: str) -> dict[str, list[tuple[int, int]]]:
    events: dict[str, list[tuple[int, int]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            events.setdefault(row["patient_id"], []).append(
                (int(row["event_start"]), int(row["event_end"])))
    return events
