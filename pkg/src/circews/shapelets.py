"""Shapelet mining and distance features.

Short subsequences are harvested from training stays right before
deterioration onsets, scored by how well their nearest-neighbour distance
separates pre-event windows from windows of event-free patients, and a
small diverse subset is kept.  At feature time each shapelet contributes
its minimal sliding L2 distance against the recent past of the matching
channel, once per lag offset.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import GRID_STEP_MIN, GridStay

logger = logging.getLogger(__name__)

#: distance reported when a stay is too short to place the shapelet window
NO_WINDOW_SENTINEL = float(np.finfo(np.float32).max)

DEFAULT_LENGTHS = {"high": (6, 12), "medium": (4, 8), "low": (4, 8)}
DEFAULT_COARSEN = {"high": 1, "medium": 12, "low": 12}


@dataclass
class ShapeletConfig:
    variables: tuple[str, ...] = ("map", "lac")
    lengths_by_class: dict[str, tuple[int, ...]] = field(
        default_factory=lambda: dict(DEFAULT_LENGTHS))
    coarsen_by_class: dict[str, int] = field(
        default_factory=lambda: dict(DEFAULT_COARSEN))
    n_candidates: int = 300        # cap on case subsequences per variable/length
    n_select: int = 20             # kept per variable, split across lengths
    lags_min: tuple[float, ...] = (0.0, 60.0, 120.0, 180.0, 240.0)
    slide_min: float = 60.0
    pad_steps: int = 1             # case windows end this many grid steps before onset
    horizon_steps: int = 96        # control windows keep clear of this pre-onset zone


@dataclass
class Shapelet:
    shapelet_id: int
    variable_id: str
    length: int                    # in coarsened steps
    coarsen: int
    accuracy: float
    values: np.ndarray


@dataclass
class ShapeletStore:
    shapelets: list[Shapelet]
    lags_min: tuple[float, ...]
    slide_min: float

    def to_json(self) -> str:
        return json.dumps({
            "lags_min": list(self.lags_min),
            "slide_min": self.slide_min,
            "shapelets": [{
                "shapelet_id": s.shapelet_id,
                "variable_id": s.variable_id,
                "length": s.length,
                "coarsen": s.coarsen,
                "accuracy": s.accuracy,
                "values": [float(v) for v in s.values],
            } for s in self.shapelets],
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ShapeletStore":
        raw = json.loads(text)
        return cls(
            shapelets=[Shapelet(
                shapelet_id=s["shapelet_id"], variable_id=s["variable_id"],
                length=s["length"], coarsen=s["coarsen"],
                accuracy=s["accuracy"],
                values=np.asarray(s["values"], dtype=np.float64),
            ) for s in raw["shapelets"]],
            lags_min=tuple(raw["lags_min"]),
            slide_min=raw["slide_min"])


def save_store(store: ShapeletStore, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(store.to_json())


def load_store(path: str) -> ShapeletStore:
    with open(path) as fh:
        return ShapeletStore.from_json(fh.read())


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def sliding_l2(series: np.ndarray, pattern: np.ndarray) -> np.ndarray:
    """L2 distance from the pattern to every window of the series that ends
    at index e >= len(pattern)-1; earlier positions are +inf."""
    length = pattern.shape[0]
    out = np.full(series.shape[0], np.inf)
    if series.shape[0] < length:
        return out
    win = np.lib.stride_tricks.sliding_window_view(series, length)
    out[length - 1:] = np.sqrt(np.sum((win - pattern) ** 2, axis=1))
    return out


def best_threshold_accuracy(d_pos: np.ndarray, d_neg: np.ndarray) -> float:
    """Accuracy of the best distance cut, taking whichever polarity wins;
    always in [0.5, 1]."""
    d = np.concatenate([d_pos, d_neg])
    y = np.concatenate([np.ones(d_pos.size), np.zeros(d_neg.size)])
    order = np.argsort(d, kind="stable")
    ds, ys = d[order], y[order]
    total = d.size
    cum_pos = np.concatenate([[0.0], np.cumsum(ys)])
    cuts = np.flatnonzero(np.diff(ds) > 0) + 1
    ks = np.concatenate([[0], cuts, [total]])
    # k points predicted positive (distance below the cut)
    acc = (cum_pos[ks] + (d_neg.size - (ks - cum_pos[ks]))) / total
    return float(np.max(np.maximum(acc, 1.0 - acc)))


def _diverse_select(cands: np.ndarray, acc: np.ndarray, ids: np.ndarray,
                    n_select: int) -> list[int]:
    """Greedy pick: best accuracy first, then repeatedly the candidate
    farthest (L2) from everything already selected; ties take the lower id.
    Returns positions into the candidate arrays."""
    n = cands.shape[0]
    if n == 0:
        return []
    sq = np.sum(cands ** 2, axis=1)
    dist = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2 * cands @ cands.T, 0.0))
    first = int(np.lexsort((ids, -acc))[0])
    selected = [first]
    remaining = [i for i in range(n) if i != first]
    min_d = dist[:, first].copy()
    while remaining and len(selected) < n_select:
        rem = np.asarray(remaining)
        pick = int(rem[np.lexsort((ids[rem], -min_d[rem]))[0]])
        selected.append(pick)
        remaining.remove(pick)
        min_d = np.minimum(min_d, dist[:, pick])
    return selected


# ---------------------------------------------------------------------------
# Mining
# ---------------------------------------------------------------------------

def _pool(x: np.ndarray, c: int) -> np.ndarray:
    """Mean-pool into blocks of c grid steps, dropping a trailing partial."""
    if c == 1:
        return x
    t = x.shape[0] // c
    return x[:t * c].reshape(t, c).mean(axis=1)


def _control_slots(coarse: dict[str, np.ndarray], events, train_ids,
                   length: int, coarsen: int,
                   horizon_steps: int) -> list[tuple[str, int]]:
    """(patient, end index) slots whose window stays clear of any event and
    of the pre-onset horizon before it."""
    event_free = [p for p in train_ids if not events.get(p)]
    slots: list[tuple[str, int]] = []
    if event_free:
        for pid in event_free:
            series = coarse.get(pid)
            if series is None:
                continue
            for e in range(length - 1, series.shape[0]):
                slots.append((pid, e))
        return slots
    for pid in train_ids:
        series = coarse.get(pid)
        if series is None:
            continue
        bad = np.zeros(series.shape[0], dtype=bool)
        for start, end in events.get(pid, []):
            lo = max((start - horizon_steps) // coarsen, 0)
            hi = min(end // coarsen, series.shape[0] - 1)
            bad[lo:hi + 1] = True
        for e in range(length - 1, series.shape[0]):
            if not bad[e - length + 1:e + 1].any():
                slots.append((pid, e))
    return slots


def mine_shapelets(grids: dict[str, GridStay],
                   events: dict[str, list[tuple[int, int]]],
                   train_ids: list[str], catalog, config: ShapeletConfig,
                   seed: int) -> ShapeletStore:
    """Harvest, score and select shapelets from the training stays."""
    shapelets: list[Shapelet] = []
    next_id = 0
    train_sorted = sorted(p for p in train_ids if p in grids)
    for var_index, vid in enumerate(config.variables):
        sample = next((grids[p] for p in train_sorted), None)
        if sample is None or vid not in sample.variables:
            continue
        entry = catalog.get(vid)
        coarsen = config.coarsen_by_class[entry.freq_class]
        lengths = config.lengths_by_class[entry.freq_class]
        if not lengths:
            continue
        coarse = {p: _pool(grids[p].channel(vid), coarsen) for p in train_sorted}

        quota, extra = divmod(config.n_select, len(lengths))
        for li, length in enumerate(lengths):
            n_keep = quota + (1 if li < extra else 0)
            rng = np.random.default_rng(
                np.random.SeedSequence([seed, 7001, var_index, length]))

            cases = []
            for pid in train_sorted:
                series = coarse[pid]
                for start, _ in events.get(pid, []):
                    end = (start - config.pad_steps) // coarsen
                    if end >= length - 1 and end < series.shape[0]:
                        cases.append(series[end - length + 1:end + 1])
            if not cases:
                continue
            if len(cases) > config.n_candidates:
                keep = np.sort(rng.choice(len(cases), size=config.n_candidates,
                                          replace=False))
                cases = [cases[i] for i in keep]
            case_mat = np.asarray(cases)

            slots = _control_slots(coarse, events, train_sorted, length,
                                   coarsen, config.horizon_steps)
            if not slots:
                logger.warning("no control windows for %s length %d", vid, length)
                continue
            picks = rng.choice(len(slots), size=len(cases),
                               replace=len(slots) < len(cases))
            ctrl_mat = np.asarray([
                coarse[slots[i][0]][slots[i][1] - length + 1:slots[i][1] + 1]
                for i in np.sort(picks)])

            sq_case = np.sum(case_mat ** 2, axis=1)
            d_case = np.sqrt(np.maximum(
                sq_case[:, None] + sq_case[None, :]
                - 2 * case_mat @ case_mat.T, 0.0))
            sq_ctrl = np.sum(ctrl_mat ** 2, axis=1)
            d_ctrl = np.sqrt(np.maximum(
                sq_case[:, None] + sq_ctrl[None, :]
                - 2 * case_mat @ ctrl_mat.T, 0.0))
            acc = np.asarray([
                best_threshold_accuracy(d_case[i], d_ctrl[i])
                for i in range(case_mat.shape[0])])

            ids = np.arange(next_id, next_id + case_mat.shape[0])
            next_id += case_mat.shape[0]
            for pos in _diverse_select(case_mat, acc, ids, n_keep):
                shapelets.append(Shapelet(
                    shapelet_id=int(ids[pos]), variable_id=vid,
                    length=length, coarsen=coarsen,
                    accuracy=float(acc[pos]),
                    values=case_mat[pos].copy()))
    return ShapeletStore(shapelets=shapelets, lags_min=tuple(config.lags_min),
                         slide_min=config.slide_min)


# ---------------------------------------------------------------------------
# Distance features
# ---------------------------------------------------------------------------

def shapelet_feature_block(grid: GridStay, store: ShapeletStore) -> np.ndarray:
    """(T, n_shapelets * n_lags) minimal sliding distances.

    For grid point i and lag l the window of allowed end positions covers
    coarse blocks completed by time t(i) - l, reaching back slide_min
    minutes; stays too short for any valid position get the sentinel.
    """
    n = grid.n_points
    lags = store.lags_min
    cols: list[np.ndarray] = []
    coarse_cache: dict[tuple[str, int], np.ndarray] = {}
    idx = np.arange(n)
    for shp in store.shapelets:
        key = (shp.variable_id, shp.coarsen)
        if key not in coarse_cache:
            coarse_cache[key] = _pool(grid.channel(shp.variable_id), shp.coarsen)
        series = coarse_cache[key]
        dist = sliding_l2(series, shp.values)
        slide_steps = int(store.slide_min // (GRID_STEP_MIN * shp.coarsen))
        padded = np.concatenate([np.full(slide_steps, np.inf), dist])
        if dist.size:
            rolled = np.lib.stride_tricks.sliding_window_view(
                padded, slide_steps + 1).min(axis=1)
        else:
            rolled = dist
        for lag in lags:
            steps = int(round(lag / GRID_STEP_MIN))
            ends = (idx - steps + 1) // shp.coarsen - 1
            vals = np.full(n, np.inf)
            ok = (ends >= 0) & (ends < rolled.shape[0])
            vals[ok] = rolled[ends[ok]]
            vals[~np.isfinite(vals)] = NO_WINDOW_SENTINEL
            cols.append(vals)
    if not cols:
        return np.empty((n, 0))
    return np.column_stack(cols)
