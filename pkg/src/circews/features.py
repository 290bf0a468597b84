"""Feature extraction on the imputed 5-minute grid.

Every grid point from 30 minutes into the stay onward yields one row:
static descriptors, the current value of each variable, multi-resolution
window summaries over horizons matched to each variable's sampling
frequency, instability-history features for the endpoint sub-conditions,
measurement-intensity features, and (optionally) shapelet distances.
Only values at or before the grid point enter any feature, and window
fractions treat each grid point as its 5-minute bucket.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .core import GRID_STEP_MIN, GridStay, PatientStatics, minutes_since, save_npz
from .endpoint import LABEL_NONE, STABLE
from .shapelets import ShapeletStore, shapelet_feature_block

NEVER_SENTINEL_MIN = 43200.0  # 30 days

#: summary-window horizons in minutes, per sampling-frequency class
DEFAULT_HORIZONS = {
    "high": (30.0, 60.0, 240.0, 720.0),
    "medium": (720.0, 1440.0, 2160.0, 2880.0),
    "low": (960.0, 1920.0, 2880.0, 4320.0),
}

INSTABILITY_HORIZONS_MIN = (720.0, 1440.0, 2160.0, 2880.0)

LOW_DOSE_SPLIT = 0.1  # norepinephrine / epinephrine band boundary


@dataclass
class FeatureConfig:
    horizons_min: dict[str, tuple[float, ...]] = field(
        default_factory=lambda: dict(DEFAULT_HORIZONS))
    instability_horizons_min: tuple[float, ...] = INSTABILITY_HORIZONS_MIN
    min_index: int = 6                 # skip the first 30 minutes of a stay
    map_var: str = "map"
    lactate_var: str = "lac"
    map_threshold: float = 65.0
    lactate_threshold: float = 2.0
    banded_drugs: tuple[str, ...] = ("norepinephrine", "epinephrine")
    plain_drugs: tuple[str, ...] = ("dobutamine", "milrinone", "levosimendan",
                                    "theophylline")
    vasopressin_var: str = "vasopressin"
    apache_groups: tuple[str, ...] = (
        "cardiovascular", "gastrointestinal", "neurological", "respiratory",
        "trauma", "other")


@dataclass
class FeatureColumn:
    name: str
    variable: str          # source variable id, or static:<field> / meta:<field>
    family: str            # static, meta, current, multires, intensity, instability, shapelet
    categorical: bool = False
    categories: tuple[str, ...] | None = None


@dataclass
class FeatureManifest:
    columns: list[FeatureColumn]

    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def variables(self) -> list[str]:
        seen: list[str] = []
        for c in self.columns:
            if c.variable not in seen:
                seen.append(c.variable)
        return seen

    def columns_for(self, variables: set[str]) -> np.ndarray:
        return np.asarray([i for i, c in enumerate(self.columns)
                           if c.variable in variables], dtype=np.int64)

    def content_hash(self) -> str:
        payload = json.dumps(
            [[c.name, c.variable, c.family, c.categorical,
              list(c.categories) if c.categories else None]
             for c in self.columns]).encode()
        return hashlib.sha256(payload).hexdigest()

    def to_json(self) -> str:
        return json.dumps({
            "hash": self.content_hash(),
            "columns": [{
                "name": c.name, "variable": c.variable, "family": c.family,
                "categorical": c.categorical,
                "categories": list(c.categories) if c.categories else None,
            } for c in self.columns],
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FeatureManifest":
        raw = json.loads(text)
        return cls(columns=[FeatureColumn(
            name=c["name"], variable=c["variable"], family=c["family"],
            categorical=c["categorical"],
            categories=tuple(c["categories"]) if c["categories"] else None,
        ) for c in raw["columns"]])


@dataclass
class FeatureMatrix:
    X: np.ndarray
    y: np.ndarray
    patient_ids: list[str]
    grid_index: np.ndarray
    manifest: FeatureManifest


# ---------------------------------------------------------------------------
# Window machinery
# ---------------------------------------------------------------------------

def _window_view(x: np.ndarray, k: int) -> np.ndarray:
    """(T, k) windows ending at each index, NaN-padded at the stay start."""
    padded = np.concatenate([np.full(k - 1, np.nan), x])
    return np.lib.stride_tricks.sliding_window_view(padded, k)


def _window_quantiles(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """(median, IQR) over the trailing window of k points."""
    win = _window_view(x, min(k, x.shape[0]))
    q25, q50, q75 = np.nanquantile(win, [0.25, 0.5, 0.75], axis=1)
    return q50, q75 - q25


def _window_min_max(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    win = _window_view(x, min(k, x.shape[0]))
    return np.nanmin(win, axis=1), np.nanmax(win, axis=1)


def _window_mean(x: np.ndarray, k: int) -> np.ndarray:
    n = x.shape[0]
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(n)
    lo = np.maximum(idx - k + 1, 0)
    return (csum[idx + 1] - csum[lo]) / (idx - lo + 1)


def _window_slope(x: np.ndarray, k: int) -> np.ndarray:
    """Least-squares slope (units per minute) over the trailing window."""
    n = x.shape[0]
    t = np.arange(n, dtype=np.float64) * GRID_STEP_MIN
    c1 = np.concatenate([[0.0], np.cumsum(np.ones(n))])
    ct = np.concatenate([[0.0], np.cumsum(t)])
    cy = np.concatenate([[0.0], np.cumsum(x)])
    ctt = np.concatenate([[0.0], np.cumsum(t * t)])
    cty = np.concatenate([[0.0], np.cumsum(t * x)])
    idx = np.arange(n)
    lo = np.maximum(idx - k + 1, 0)
    m = c1[idx + 1] - c1[lo]
    st = ct[idx + 1] - ct[lo]
    sy = cy[idx + 1] - cy[lo]
    stt = ctt[idx + 1] - ctt[lo]
    sty = cty[idx + 1] - cty[lo]
    denom = stt - st * st / m
    numer = sty - st * sy / m
    out = np.zeros(n)
    ok = denom > 1e-12
    out[ok] = numer[ok] / denom[ok]
    return out


def _window_mode(x: np.ndarray, k: int) -> np.ndarray:
    """Most frequent value over the trailing window; ties take the lowest."""
    cats = np.unique(x)
    if cats.size == 1:
        return np.full(x.shape[0], cats[0])
    n = x.shape[0]
    idx = np.arange(n)
    lo = np.maximum(idx - k + 1, 0)
    counts = np.empty((cats.size, n))
    for ci, cat in enumerate(cats):
        csum = np.concatenate([[0], np.cumsum(x == cat)])
        counts[ci] = csum[idx + 1] - csum[lo]
    return cats[np.argmax(counts, axis=0)]


def _prefix_median(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        out[i] = np.median(x[:i + 1])
    return out


def _fraction_of_time(active: np.ndarray, k: int | None) -> np.ndarray:
    """Fraction of the last k buckets (or the whole stay so far) spent in
    the state, counting completed buckets strictly before the grid point."""
    n = active.shape[0]
    csum = np.concatenate([[0.0], np.cumsum(active)])
    idx = np.arange(n)
    lo = np.zeros(n, dtype=np.int64) if k is None else np.maximum(idx - k, 0)
    size = idx - lo
    out = np.zeros(n)
    ok = size > 0
    out[ok] = (csum[idx[ok]] - csum[lo[ok]]) / size[ok]
    return out


def _time_since_last(active: np.ndarray) -> np.ndarray:
    """Minutes since the state last held (0 while it holds, sentinel if never)."""
    n = active.shape[0]
    idx = np.arange(n)
    last = np.maximum.accumulate(np.where(active, idx, -1))
    out = np.where(last >= 0, (idx - last) * GRID_STEP_MIN, NEVER_SENTINEL_MIN)
    return out.astype(np.float64)


# ---------------------------------------------------------------------------
# Instability sub-conditions
# ---------------------------------------------------------------------------

def _instability_conditions(grid: GridStay, config: FeatureConfig,
                            ) -> list[tuple[str, str, np.ndarray]]:
    """(name, source variable, active mask) per endpoint sub-condition,
    from causally imputed channels only."""
    conds: list[tuple[str, str, np.ndarray]] = []
    have = set(grid.variables)

    map_low = None
    if config.map_var in have:
        map_low = grid.channel(config.map_var) <= config.map_threshold
        conds.append(("map_low", config.map_var, map_low))
    lac_high = None
    if config.lactate_var in have:
        lac_high = grid.channel(config.lactate_var) >= config.lactate_threshold
        conds.append(("lac_high", config.lactate_var, lac_high))

    plain_on: dict[str, np.ndarray] = {}
    for vid in config.plain_drugs:
        if vid in have:
            plain_on[vid] = grid.channel(vid) > 0
            conds.append((f"{vid}_on", vid, plain_on[vid]))
    band_low: dict[str, np.ndarray] = {}
    band_high: dict[str, np.ndarray] = {}
    for vid in config.banded_drugs:
        if vid in have:
            rate = grid.channel(vid)
            band_low[vid] = (rate > 0) & (rate < LOW_DOSE_SPLIT)
            band_high[vid] = rate >= LOW_DOSE_SPLIT
            conds.append((f"{vid}_low", vid, band_low[vid]))
            conds.append((f"{vid}_high", vid, band_high[vid]))
    vaso_on = None
    if config.vasopressin_var in have:
        vaso_on = grid.channel(config.vasopressin_var) > 0
        conds.append((f"{config.vasopressin_var}_on", config.vasopressin_var, vaso_on))

    if lac_high is not None:
        n = grid.n_points

        def any_of(masks):
            out = np.zeros(n, dtype=bool)
            for m in masks:
                if m is not None:
                    out |= m
            return out

        level1 = lac_high & any_of([map_low, *plain_on.values()])
        level2 = lac_high & any_of(list(band_low.values()))
        level3 = lac_high & any_of([*band_high.values(), vaso_on])
        conds.append(("event_l1", "event", level1))
        conds.append(("event_l2", "event", level2))
        conds.append(("event_l3", "event", level3))
    return conds


# ---------------------------------------------------------------------------
# Manifest construction
# ---------------------------------------------------------------------------

def build_manifest(grid: GridStay, catalog, config: FeatureConfig,
                   store: ShapeletStore | None = None) -> FeatureManifest:
    """Column layout implied by the catalog, the config and the shapelet
    store; identical for every stay of a cohort."""
    cols: list[FeatureColumn] = []
    cols.append(FeatureColumn("static/age", "static:age", "static"))
    cols.append(FeatureColumn("static/sex", "static:sex", "static"))
    cols.append(FeatureColumn("static/height", "static:height", "static"))
    cols.append(FeatureColumn("static/emergency", "static:emergency", "static"))
    cols.append(FeatureColumn("static/surgical", "static:surgical", "static"))
    cols.append(FeatureColumn(
        "static/apache_group", "static:apache_group", "static", categorical=True,
        categories=tuple(config.apache_groups) + ("<other>",)))
    cols.append(FeatureColumn("meta/time_since_admission",
                              "meta:time_since_admission", "meta"))

    for vid in grid.variables:
        entry = catalog.get(vid)
        horizons = config.horizons_min[entry.freq_class]
        cols.append(FeatureColumn(f"{vid}/current", vid, "current",
                                  categorical=entry.kind == "categorical"))
        for h in horizons:
            tag = f"{int(h)}"
            if entry.kind == "continuous":
                for stat in ("med", "iqr", "min", "max", "slope"):
                    cols.append(FeatureColumn(f"{vid}/{stat}{tag}", vid, "multires"))
            elif entry.kind == "drug":
                for stat in ("mean", "iqr", "min", "max", "slope"):
                    cols.append(FeatureColumn(f"{vid}/{stat}{tag}", vid, "multires"))
            elif entry.kind == "categorical":
                cols.append(FeatureColumn(f"{vid}/mode{tag}", vid, "multires",
                                          categorical=True))
            else:
                cols.append(FeatureColumn(f"{vid}/mean{tag}", vid, "multires"))
        stay_stat = {"continuous": "stay_med", "drug": "stay_mean",
                     "categorical": "stay_mode", "binary": "stay_mean"}[entry.kind]
        cols.append(FeatureColumn(f"{vid}/{stay_stat}", vid, "multires",
                                  categorical=entry.kind == "categorical"))
        cols.append(FeatureColumn(f"{vid}/min_since_meas", vid, "intensity"))
        cols.append(FeatureColumn(f"{vid}/meas_ratio", vid, "intensity"))

    for name, source, _ in _instability_conditions(grid, config):
        cols.append(FeatureColumn(f"inst/{name}/active", source, "instability"))
        cols.append(FeatureColumn(f"inst/{name}/min_since", source, "instability"))
        for h in config.instability_horizons_min:
            cols.append(FeatureColumn(f"inst/{name}/frac{int(h)}", source,
                                      "instability"))
        cols.append(FeatureColumn(f"inst/{name}/frac_stay", source, "instability"))

    if store is not None:
        for shp in store.shapelets:
            for lag in store.lags_min:
                cols.append(FeatureColumn(
                    f"shp/{shp.variable_id}/s{shp.shapelet_id}/lag{int(lag)}",
                    shp.variable_id, "shapelet"))
    return FeatureManifest(cols)


# ---------------------------------------------------------------------------
# Per-stay feature block
# ---------------------------------------------------------------------------

def _static_code(statics: PatientStatics, config: FeatureConfig) -> list[float]:
    group = statics.apache_group or ""
    try:
        group_code = float(config.apache_groups.index(group))
    except ValueError:
        group_code = float(len(config.apache_groups))
    return [
        float(statics.age if statics.age is not None else 0.0),
        1.0 if statics.sex == "M" else 0.0,
        float(statics.height_cm if statics.height_cm is not None else 0.0),
        float(statics.emergency or 0),
        float(statics.surgical or 0),
        group_code,
    ]


def compute_feature_block(grid: GridStay, statics: PatientStatics, catalog,
                          config: FeatureConfig,
                          store: ShapeletStore | None = None) -> np.ndarray:
    """All feature columns for every grid point of one stay, (T, F)."""
    n = grid.n_points
    blocks: list[np.ndarray] = []

    static_vals = _static_code(statics, config)
    blocks.extend(np.full(n, v) for v in static_vals)
    offset = minutes_since(grid.grid_start, statics.admission_time)
    blocks.append(offset + grid.grid_minutes())

    for vi, vid in enumerate(grid.variables):
        entry = catalog.get(vid)
        x = grid.values[vi]
        horizons = config.horizons_min[entry.freq_class]
        blocks.append(x.copy())
        for h in horizons:
            k = int(round(h / GRID_STEP_MIN))
            if entry.kind in ("continuous", "drug"):
                med, iqr = _window_quantiles(x, k)
                first = _window_mean(x, k) if entry.kind == "drug" else med
                mn, mx = _window_min_max(x, k)
                blocks.extend([first, iqr, mn, mx, _window_slope(x, k)])
            elif entry.kind == "categorical":
                blocks.append(_window_mode(x, k))
            else:
                blocks.append(_window_mean(x, k))
        if entry.kind == "continuous":
            blocks.append(_prefix_median(x))
        elif entry.kind == "categorical":
            blocks.append(_window_mode(x, n))
        else:
            blocks.append(_window_mean(x, n))
        blocks.append(_time_since_last(grid.measured[vi]))
        blocks.append(np.cumsum(grid.measured[vi]) / np.arange(1, n + 1))

    for _, _, active in _instability_conditions(grid, config):
        blocks.append(active.astype(np.float64))
        blocks.append(_time_since_last(active))
        for h in config.instability_horizons_min:
            blocks.append(_fraction_of_time(active, int(round(h / GRID_STEP_MIN))))
        blocks.append(_fraction_of_time(active, None))

    if store is not None:
        blocks.append(shapelet_feature_block(grid, store))
    return np.column_stack(blocks)


def assemble_matrix(grids: dict[str, GridStay],
                    statics: dict[str, PatientStatics], catalog,
                    config: FeatureConfig,
                    store: ShapeletStore | None = None,
                    include_unlabeled: bool = False,
                    patient_ids: list[str] | None = None) -> FeatureMatrix:
    """Stack per-stay feature blocks into one design matrix.

    Rows are stable grid points at least 30 minutes into the stay; by
    default only labeled ones (positive or negative) are kept, and
    ``include_unlabeled`` adds the rest with label -1 for scoring.
    """
    pids = sorted(grids) if patient_ids is None else sorted(patient_ids)
    manifest = None
    xs, ys, row_pids, row_idx = [], [], [], []
    for pid in pids:
        grid = grids[pid]
        if grid.labels is None or grid.states is None:
            raise ValueError(f"stay {pid} has no endpoint annotation")
        if manifest is None:
            manifest = build_manifest(grid, catalog, config, store)
        block = compute_feature_block(grid, statics[pid], catalog, config, store)
        keep = (grid.states == STABLE) & (np.arange(grid.n_points) >= config.min_index)
        if not include_unlabeled:
            keep &= grid.labels != LABEL_NONE
        rows = np.flatnonzero(keep)
        if rows.size == 0:
            continue
        xs.append(block[rows])
        ys.append(grid.labels[rows])
        row_pids.extend([pid] * rows.size)
        row_idx.append(rows)
    if manifest is None or not xs:
        raise ValueError("no rows to assemble")
    return FeatureMatrix(
        X=np.concatenate(xs, axis=0),
        y=np.concatenate(ys).astype(np.int8),
        patient_ids=row_pids,
        grid_index=np.concatenate(row_idx).astype(np.int64),
        manifest=manifest,
    )


def save_matrix(matrix: FeatureMatrix, path: str, manifest_path: str) -> None:
    save_npz(path, {"X": matrix.X, "y": matrix.y,
                    "patient_ids": np.asarray(matrix.patient_ids),
                    "grid_index": matrix.grid_index})
    with open(manifest_path, "w") as fh:
        fh.write(matrix.manifest.to_json())


def load_matrix(path: str, manifest_path: str) -> FeatureMatrix:
    with open(manifest_path) as fh:
        manifest = FeatureManifest.from_json(fh.read())
    with np.load(path) as data:
        return FeatureMatrix(
            X=data["X"], y=data["y"],
            patient_ids=[str(p) for p in data["patient_ids"]],
            grid_index=data["grid_index"], manifest=manifest)
