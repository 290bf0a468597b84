"""Independent reference implementations backing the acceptance tests.

Everything in this file is deliberately written as plain scalar loops that
re-derive each contract from its written definition.  None of it shares
code, vectorized idioms, or intermediate representations with the package
under test — slow and obvious beats fast and entangled here.
"""

from __future__ import annotations

import math
from itertools import combinations

import numpy as np

LAC_THRESHOLD = 2.0
MAP_THRESHOLD = 65.0
BOUNDARY_FILL_MIN = 180.0
CROSSING_LIMIT_MIN = 360.0
STEP = 5


# ---------------------------------------------------------------------------
# endpoint: minute-resolution state oracle
# ---------------------------------------------------------------------------

def _lactate_at(t, times, values):
    """Scalar lactate estimate at minute t, or (None, False) when missing.

    Boundary rule: a strictly-normal edge measurement fills outward without
    limit, an abnormal one for at most three hours.  Between measurements:
    linear, except threshold crossings six or more hours apart, which fill
    three hours inward from each side and leave the middle undefined.
    """
    n = len(times)
    if n == 0:
        return None, False
    if t < times[0]:
        if values[0] < LAC_THRESHOLD or t >= times[0] - BOUNDARY_FILL_MIN:
            return values[0], True
        return None, False
    if t > times[-1]:
        if values[-1] < LAC_THRESHOLD or t <= times[-1] + BOUNDARY_FILL_MIN:
            return values[-1], True
        return None, False
    # prefer the later segment at shared endpoints so a grid minute that
    # coincides with a measurement reports that measurement exactly
    seg = None
    for i in range(n - 1):
        if times[i] <= t <= times[i + 1]:
            seg = i
    if seg is None:  # t == times[0] == times[-1], single measurement
        return values[0], True
    ta, tb = times[seg], times[seg + 1]
    va, vb = values[seg], values[seg + 1]
    crossing = (va - LAC_THRESHOLD) * (vb - LAC_THRESHOLD) < 0
    if crossing and tb - ta >= CROSSING_LIMIT_MIN:
        if t >= tb - BOUNDARY_FILL_MIN:
            return vb, True
        if t <= ta + BOUNDARY_FILL_MIN:
            return va, True
        return None, False
    frac = (t - ta) / (tb - ta)
    return va + (vb - va) * frac, True


def minute_states(map_vals, map_measured_any: bool, drug_on, lac_times,
                  lac_values) -> np.ndarray:
    """Annotate every grid point by brute-force minute counting.

    Returns int8 states: 0 stable, 1 failure, 2 ambiguous.  A point's
    window is the 45 minutes [5p-20, 5p+25) clipped to the stay; each
    minute inherits the conditions of the 5-minute bucket containing it,
    and a condition "holds for 30 minutes" when at least 30 window minutes
    satisfy it.
    """
    n = len(map_vals)
    states = np.full(n, 2, dtype=np.int8)
    if not map_measured_any:
        return states

    lac_hi = [False] * n
    lac_lo = [False] * n
    for b in range(n):
        est, ok = _lactate_at(float(b * STEP), list(lac_times),
                              list(lac_values))
        if ok:
            lac_hi[b] = est >= LAC_THRESHOLD
            lac_lo[b] = est <= LAC_THRESHOLD
    map_low = [bool(map_vals[b] <= MAP_THRESHOLD) for b in range(n)]
    drug = [bool(drug_on[b]) for b in range(n)]

    stay_minutes = n * STEP
    for p in range(n):
        c_circ = c_hi = c_ok = c_free = c_lo = 0
        for minute in range(p * STEP - 20, p * STEP + 25):
            if minute < 0 or minute >= stay_minutes:
                continue
            b = minute // STEP
            if map_low[b] or drug[b]:
                c_circ += 1
            if lac_hi[b]:
                c_hi += 1
            if not map_low[b]:
                c_ok += 1
            if not drug[b]:
                c_free += 1
            if lac_lo[b]:
                c_lo += 1
        if c_circ >= 30 and c_hi >= 30:
            states[p] = 1
        elif c_ok >= 30 and c_free >= 30 and c_lo >= 30:
            states[p] = 0
    return states


# ---------------------------------------------------------------------------
# attribution: brute-force Shapley over feature subsets
# ---------------------------------------------------------------------------

def _subset_value(tree, node: int, x, present: frozenset) -> float:
    """Expected leaf value when only ``present`` features are revealed.

    Absent features descend both children weighted by training cover.
    """
    if tree.feature[node] < 0:
        return float(tree.value[node])
    f = int(tree.feature[node])
    left, right = int(tree.left[node]), int(tree.right[node])
    if f in present:
        child = left if x[f] <= tree.threshold[node] else right
        return _subset_value(tree, child, x, present)
    cl, cr = float(tree.cover[left]), float(tree.cover[right])
    total = cl + cr
    return (cl * _subset_value(tree, left, x, present)
            + cr * _subset_value(tree, right, x, present)) / total


def brute_shapley(model, x) -> tuple[np.ndarray, float]:
    """Exact Shapley values of one row by subset enumeration.

    Feasible because the acceptance ensembles keep at most 8 features.
    Returns (phi, expected_margin); phi is in margin units and already
    includes the learning-rate scaling.
    """
    n_feat = len(x)
    feats = list(range(n_feat))
    phi = np.zeros(n_feat)
    base = model.base_score
    fact = [math.factorial(k) for k in range(n_feat + 1)]
    for tree in model.trees:
        cache: dict[frozenset, float] = {}

        def val(s: frozenset) -> float:
            if s not in cache:
                cache[s] = _subset_value(tree, 0, x, s)
            return cache[s]

        for i in feats:
            others = [f for f in feats if f != i]
            for k in range(len(others) + 1):
                w = fact[k] * fact[n_feat - k - 1] / fact[n_feat]
                for combo in combinations(others, k):
                    s = frozenset(combo)
                    phi[i] += w * (val(s | {i}) - val(s))
        base += model.learning_rate * val(frozenset())
    return phi * model.learning_rate, base


# ---------------------------------------------------------------------------
# alarms: brute-force event scoring and the silencing invariant
# ---------------------------------------------------------------------------

def brute_event_counts(alarm_minutes, onset_minutes, min_lead=5.0,
                       horizon=480.0, grey=0.0) -> dict:
    """Recall/precision ingredients from their definitions, pair by pair."""
    caught = 0
    for onset in onset_minutes:
        if any(min_lead <= onset - a <= horizon for a in alarm_minutes):
            caught += 1
    tp = fp = grey_n = 0
    for a in alarm_minutes:
        ahead = [o - a for o in onset_minutes if o - a > 0]
        if any(d <= horizon for d in ahead):
            tp += 1
        elif any(d <= horizon + grey for d in ahead):
            grey_n += 1
        else:
            fp += 1
    return {"n_events": len(onset_minutes), "n_caught": caught,
            "n_tp": tp, "n_fp": fp, "n_grey": grey_n}


def failure_run_ends(states) -> list[float]:
    """Minutes of the final grid point of every maximal failure run."""
    ends = []
    n = len(states)
    for i in range(n):
        if states[i] == 1 and (i + 1 == n or states[i + 1] != 1):
            ends.append(i * 5.0)
    return ends


def silencing_violations(alarm_indices, states, silence_min: float,
                         reset_min: float) -> int:
    """Count consecutive alarm pairs violating the silencing contract.

    A pair is legitimate when the alarms are at least the silencing
    duration apart, or an event ended between them and the later alarm
    clears that end plus the reset time.
    """
    ends = failure_run_ends(states)
    times = [i * 5.0 for i in alarm_indices]
    bad = 0
    for t1, t2 in zip(times, times[1:]):
        if t2 - t1 >= silence_min:
            continue
        if any(t1 <= e < t2 and t2 >= e + reset_min for e in ends):
            continue
        bad += 1
    return bad
