"""Stage orchestration over a work directory.

Every stage reads its inputs from disk and writes its outputs back, so a
full run is just the stages in order and any stage can be rerun alone.
Because nothing is passed in memory between stages, rerunning the whole
pipeline on the same config reproduces every artifact byte for byte.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import clean as clean_mod
from . import core, endpoint, features, impute, shapelets, synth
from .alarmeval import machine, metrics, reports
from .config import PipelineConfig, resolved_json, to_jsonable
from .core import GRID_STEP_MIN, format_float
from .model import classifiers, splits as splits_mod

logger = logging.getLogger(__name__)

ARTIFACTS = {
    "catalog": "catalog.csv",
    "records": "records.csv",
    "statics": "statics.csv",
    "truth_events": "truth_events.csv",
    "splits": "splits.json",
    "cleaned_records": "cleaned_records.csv",
    "audit": "audit.csv",
    "global_stats": "global_stats.csv",
    "impute_params": "impute_params.json",
    "grids": "grids.npz",
    "states": "states.npz",
    "events": "events.csv",
    "shapelets": "shapelets.json",
    "features": "features.npz",
    "feature_manifest": "feature_manifest.json",
    "model": "model.json",
    "training_log": "training_log.json",
    "scores": "scores.csv",
    "threshold": "threshold.json",
    "alarms": "alarms.csv",
    "metrics": "metrics.json",
    "pr_curve": "pr_curve.csv",
    "config_used": "config_used.json",
    "report_dir": "report",
}

STAGES = ("synth", "clean", "impute", "annotate", "mine-shapelets",
          "featurize", "train", "alarm", "evaluate", "report")


class MissingArtifactError(RuntimeError):
    """An earlier stage's output is absent from the work directory."""

    def __init__(self, stage: str, path: str):
        super().__init__(
            f"{path} not found: run the {stage!r} stage first")
        self.stage = stage
        self.path = path


def _path(workdir: str, key: str) -> str:
    return os.path.join(workdir, ARTIFACTS[key])


def _need(workdir: str, key: str, produced_by: str) -> str:
    p = _path(workdir, key)
    if not os.path.exists(p):
        raise MissingArtifactError(produced_by, p)
    return p


def _load_inputs(workdir: str, records_key: str, stage: str):
    catalog = core.load_catalog(_need(workdir, "catalog", stage))
    stays = core.load_records(_need(workdir, records_key, stage),
                              _need(workdir, "statics", stage), catalog)
    return catalog, stays


def _load_split(workdir: str, config: PipelineConfig) -> splits_mod.SplitPlan:
    plans = splits_mod.load_splits(_need(workdir, "splits", "clean"))
    if config.split_name not in plans:
        raise MissingArtifactError(
            "clean", f"split {config.split_name!r} in {_path(workdir, 'splits')}")
    return plans[config.split_name]


def _save_states(grids: dict[str, core.GridStay], path: str) -> None:
    arrays = {}
    for pid in sorted(grids):
        arrays[f"states__{pid}"] = grids[pid].states
        arrays[f"labels__{pid}"] = grids[pid].labels
    core.save_npz(path, arrays)


def _attach_states(grids: dict[str, core.GridStay], path: str) -> None:
    with np.load(path) as data:
        for pid, grid in grids.items():
            grid.states = data[f"states__{pid}"]
            grid.labels = data[f"labels__{pid}"]


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_synth(config: PipelineConfig, workdir: str) -> None:
    os.makedirs(workdir, exist_ok=True)
    catalog, stays, truth = synth.generate_cohort(config.synth)
    synth.write_cohort(catalog, stays, truth, workdir)
    with open(_path(workdir, "config_used"), "w") as fh:
        fh.write(resolved_json(config) + "\n")
    logger.info("synthesized %d stays", len(stays))


def stage_clean(config: PipelineConfig, workdir: str) -> None:
    catalog, stays = _load_inputs(workdir, "records", "synth")
    plans = splits_mod.make_splits({p: s.statics for p, s in stays.items()},
                                   config.splits)
    splits_mod.write_splits(plans, _path(workdir, "splits"))
    split = plans[config.split_name]
    stats, audit = clean_mod.clean_cohort(stays, catalog, config.clean,
                                          train_ids=split.train)
    ordered = [stays[pid] for pid in sorted(stays)]
    core.write_records(ordered, _path(workdir, "cleaned_records"))
    clean_mod.write_audit(audit, _path(workdir, "audit"))
    clean_mod.write_global_stats(stats, _path(workdir, "global_stats"))
    logger.info("cleaned %d stays (%d audit entries)", len(stays), len(audit))


def stage_impute(config: PipelineConfig, workdir: str) -> None:
    catalog, stays = _load_inputs(workdir, "cleaned_records", "clean")
    split = _load_split(workdir, config)
    params = impute.fit_imputation_params(
        [stays[p] for p in sorted(split.train) if p in stays], catalog)
    with open(_path(workdir, "impute_params"), "w") as fh:
        fh.write(params.to_json())
    grids = impute.impute_cohort(stays, catalog, params, config.impute)
    impute.save_grids(grids, _path(workdir, "grids"))
    logger.info("imputed %d of %d stays onto the grid", len(grids), len(stays))


def stage_annotate(config: PipelineConfig, workdir: str) -> None:
    catalog, stays = _load_inputs(workdir, "cleaned_records", "clean")
    grids = impute.load_grids(_need(workdir, "grids", "impute"))
    events = endpoint.annotate_cohort(grids, stays, config.endpoint)
    _save_states(grids, _path(workdir, "states"))
    endpoint.write_events(events, _path(workdir, "events"))
    n_ev = sum(len(v) for v in events.values())
    logger.info("annotated %d stays, %d failure episodes", len(grids), n_ev)


def stage_mine_shapelets(config: PipelineConfig, workdir: str) -> None:
    catalog = core.load_catalog(_need(workdir, "catalog", "synth"))
    grids = impute.load_grids(_need(workdir, "grids", "impute"))
    _attach_states(grids, _need(workdir, "states", "annotate"))
    events = endpoint.load_events(_need(workdir, "events", "annotate"))
    split = _load_split(workdir, config)
    store = shapelets.mine_shapelets(grids, events, split.train, catalog,
                                     config.shapelets, seed=config.model.seed)
    shapelets.save_store(store, _path(workdir, "shapelets"))
    logger.info("kept %d shapelets", len(store.shapelets))


def _featurize_chunk(workdir: str, config_json: dict,
                     pids: list[str]) -> bytes:
    """Worker for parallel feature extraction; returns a serialized matrix."""
    import io

    from .config import config_from_dict
    config = config_from_dict(config_json)
    catalog = core.load_catalog(_path(workdir, "catalog"))
    grids = impute.load_grids(_path(workdir, "grids"))
    _attach_states(grids, _path(workdir, "states"))
    grids = {p: grids[p] for p in pids}
    with open(_path(workdir, "impute_params")) as fh:
        params = impute.ImputationParams.from_json(fh.read())
    statics = {p: impute.impute_statics(s, params)
               for p, s in core.load_statics(_path(workdir, "statics")).items()}
    store = shapelets.load_store(_path(workdir, "shapelets")) \
        if os.path.exists(_path(workdir, "shapelets")) else None
    matrix = features.assemble_matrix(grids, statics, catalog, config.features,
                                      store=store, include_unlabeled=True)
    buf = io.BytesIO()
    np.savez(buf, X=matrix.X, y=matrix.y,
             patient_ids=np.asarray(matrix.patient_ids),
             grid_index=matrix.grid_index)
    return buf.getvalue()


def stage_featurize(config: PipelineConfig, workdir: str) -> None:
    catalog = core.load_catalog(_need(workdir, "catalog", "synth"))
    grids = impute.load_grids(_need(workdir, "grids", "impute"))
    _attach_states(grids, _need(workdir, "states", "annotate"))
    with open(_need(workdir, "impute_params", "impute")) as fh:
        params = impute.ImputationParams.from_json(fh.read())
    statics = {p: impute.impute_statics(s, params)
               for p, s in core.load_statics(_path(workdir, "statics")).items()}
    store = None
    if os.path.exists(_path(workdir, "shapelets")):
        store = shapelets.load_store(_path(workdir, "shapelets"))

    pids = sorted(grids)
    if config.threads > 1 and len(pids) > 1:
        chunks = [pids[i::config.threads] for i in range(config.threads)]
        chunks = [c for c in chunks if c]
        cfg_json = to_jsonable(config)
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            blobs = list(pool.map(_featurize_chunk,
                                  [workdir] * len(chunks),
                                  [cfg_json] * len(chunks), chunks))
        parts = []
        for blob in blobs:
            import io
            with np.load(io.BytesIO(blob)) as data:
                parts.append((list(map(str, data["patient_ids"])), data["X"],
                              data["y"], data["grid_index"]))
        # reassemble in sorted patient order regardless of chunking
        by_pid: dict[str, tuple] = {}
        for pid_list, x, y, gi in parts:
            rows_of: dict[str, list[int]] = {}
            for i, p in enumerate(pid_list):
                rows_of.setdefault(p, []).append(i)
            for p, rows in rows_of.items():
                by_pid[p] = (x[rows], y[rows], gi[rows])
        manifest = features.build_manifest(grids[pids[0]], catalog,
                                           config.features, store)
        xs, ys, gis, row_pids = [], [], [], []
        for p in sorted(by_pid):
            x, y, gi = by_pid[p]
            xs.append(x)
            ys.append(y)
            gis.append(gi)
            row_pids.extend([p] * x.shape[0])
        matrix = features.FeatureMatrix(
            X=np.concatenate(xs, axis=0), y=np.concatenate(ys),
            patient_ids=row_pids, grid_index=np.concatenate(gis),
            manifest=manifest)
    else:
        matrix = features.assemble_matrix(grids, statics, catalog,
                                          config.features, store=store,
                                          include_unlabeled=True)
    features.save_matrix(matrix, _path(workdir, "features"),
                         _path(workdir, "feature_manifest"))
    logger.info("feature matrix: %d rows x %d columns",
                matrix.X.shape[0], matrix.X.shape[1])


def _split_rows(matrix: features.FeatureMatrix, pids: list[str],
                labeled_only: bool = True) -> np.ndarray:
    wanted = set(pids)
    mask = np.asarray([p in wanted for p in matrix.patient_ids])
    if labeled_only:
        mask &= matrix.y >= 0
    return np.flatnonzero(mask)


def stage_train(config: PipelineConfig, workdir: str) -> None:
    matrix = features.load_matrix(_need(workdir, "features", "featurize"),
                                  _need(workdir, "feature_manifest", "featurize"))
    split = _load_split(workdir, config)
    tr = _split_rows(matrix, split.train)
    va = _split_rows(matrix, split.val)
    if tr.size == 0 or va.size == 0:
        raise core.DataError("empty training or validation rows for split "
                             f"{config.split_name!r}")
    model, history = classifiers.train_model(
        config.model.kind, matrix.X[tr], matrix.y[tr],
        matrix.X[va], matrix.y[va], matrix.manifest, config.model.gbdt)
    with open(_path(workdir, "model"), "w") as fh:
        fh.write(model.to_json())
    log = {
        "kind": config.model.kind,
        "split": config.split_name,
        "n_train_rows": int(tr.size),
        "n_val_rows": int(va.size),
        "train_prevalence": float(np.mean(matrix.y[tr] == 1)),
        "history": history,
    }
    with open(_path(workdir, "training_log"), "w") as fh:
        json.dump(log, fh, indent=1, sort_keys=True)
        fh.write("\n")
    logger.info("trained %s on %d rows", config.model.kind, tr.size)


def _scores_by_patient(matrix: features.FeatureMatrix, model,
                       pids: list[str],
                       n_points: dict[str, int]) -> dict[str, np.ndarray]:
    """Per-patient score traces on the grid; NaN where nothing was scored."""
    out = {p: np.full(n_points[p], np.nan) for p in sorted(pids)}
    rows = _split_rows(matrix, pids, labeled_only=False)
    if rows.size:
        probs = model.predict_proba(matrix.X[rows])
        for r, prob in zip(rows, probs):
            out[matrix.patient_ids[r]][matrix.grid_index[r]] = prob
    return out


def _grid_meta(workdir: str):
    grids = impute.load_grids(_need(workdir, "grids", "impute"))
    _attach_states(grids, _need(workdir, "states", "annotate"))
    states = {p: g.states for p, g in grids.items()}
    n_points = {p: g.n_points for p, g in grids.items()}
    offset = {p: core.minutes_since(g.grid_start, g.admission_time)
              for p, g in grids.items()}
    labels = {p: g.labels for p, g in grids.items()}
    return states, labels, n_points, offset


def _events_minutes(events: dict[str, list[tuple[int, int]]]
                    ) -> dict[str, list[tuple[float, float]]]:
    return {p: [(s * GRID_STEP_MIN, e * GRID_STEP_MIN) for s, e in evs]
            for p, evs in events.items()}


def stage_alarm(config: PipelineConfig, workdir: str) -> None:
    matrix = features.load_matrix(_need(workdir, "features", "featurize"),
                                  _need(workdir, "feature_manifest", "featurize"))
    with open(_need(workdir, "model", "train")) as fh:
        model = classifiers.load_model(fh.read())
    split = _load_split(workdir, config)
    states, labels, n_points, _ = _grid_meta(workdir)
    events = _events_minutes(endpoint.load_events(
        _need(workdir, "events", "annotate")))

    scored_pids = [p for p in split.val + split.test if p in states]
    scores = _scores_by_patient(matrix, model, scored_pids, n_points)
    with open(_path(workdir, "scores"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "grid_index", "state", "label", "score"])
        for pid in sorted(scores):
            trace = scores[pid]
            for k in np.flatnonzero(np.isfinite(trace)):
                writer.writerow([pid, int(k), int(states[pid][k]),
                                 int(labels[pid][k]), format_float(trace[k])])

    val_pids = [p for p in split.val if p in states]
    if config.alarm.threshold is not None:
        tau = float(config.alarm.threshold)
        how = "configured"
    else:
        tau = metrics.choose_threshold(
            {p: states[p] for p in val_pids},
            {p: scores[p] for p in val_pids},
            {p: events.get(p, []) for p in val_pids},
            config.alarm.silencing_min, config.alarm.reset_min,
            config.evaluate.params(), target_recall=config.alarm.target_recall,
            logit_backoff=config.alarm.logit_backoff)
        how = "validation"
    with open(_path(workdir, "threshold"), "w") as fh:
        json.dump({"threshold": tau, "picked_on": how,
                   "target_recall": config.alarm.target_recall,
                   "split": config.split_name}, fh, indent=1, sort_keys=True)
        fh.write("\n")

    policy = machine.AlarmPolicy(tau, config.alarm.silencing_min,
                                 config.alarm.reset_min)
    test_pids = [p for p in split.test if p in states]
    alarms = machine.alarms_for_cohort({p: states[p] for p in test_pids},
                                       {p: scores[p] for p in test_pids},
                                       policy)
    with open(_path(workdir, "alarms"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "grid_index", "minutes"])
        for pid in sorted(alarms):
            for k in alarms[pid]:
                writer.writerow([pid, int(k), format_float(k * GRID_STEP_MIN)])
    n_alarms = sum(len(a) for a in alarms.values())
    logger.info("threshold %.6f (%s); %d alarms over %d test stays",
                tau, how, n_alarms, len(test_pids))


def _load_scores(path: str, n_points: dict[str, int]) -> dict[str, np.ndarray]:
    out = {p: np.full(n, np.nan) for p, n in n_points.items()}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            pid = row["patient_id"]
            if pid in out:
                out[pid][int(row["grid_index"])] = float(row["score"])
    return out


def _load_alarm_minutes(path: str) -> dict[str, np.ndarray]:
    got: dict[str, list[float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            got.setdefault(row["patient_id"], []).append(float(row["minutes"]))
    return {p: np.asarray(v) for p, v in got.items()}


def stage_evaluate(config: PipelineConfig, workdir: str) -> None:
    split = _load_split(workdir, config)
    states, labels, n_points, _ = _grid_meta(workdir)
    events = _events_minutes(endpoint.load_events(
        _need(workdir, "events", "annotate")))
    scores = _load_scores(_need(workdir, "scores", "alarm"), n_points)
    with open(_need(workdir, "threshold", "alarm")) as fh:
        tau = float(json.load(fh)["threshold"])
    alarms = _load_alarm_minutes(_need(workdir, "alarms", "alarm"))

    test_pids = [p for p in split.test if p in states]
    params = config.evaluate.params()
    ev_test = {p: events.get(p, []) for p in test_pids}
    sc = metrics.score_events({p: alarms.get(p, np.empty(0)) for p in test_pids},
                              ev_test, params)

    y_parts, s_parts = [], []
    for p in test_pids:
        ok = np.isfinite(scores[p]) & (labels[p] >= 0)
        y_parts.append(labels[p][ok])
        s_parts.append(scores[p][ok])
    y = np.concatenate(y_parts) if y_parts else np.empty(0)
    s = np.concatenate(s_parts) if s_parts else np.empty(0)

    result = {
        "split": config.split_name,
        "threshold": tau,
        "timeslice": {
            "n_rows": int(y.size),
            "prevalence": float(np.mean(y == 1)) if y.size else float("nan"),
            "auroc": metrics.auroc(y, s),
            "auprc": metrics.average_precision(y, s),
        },
        "event": dict(sc.to_dict(),
                      prevalence=metrics.event_prevalence(
                          {p: states[p] for p in test_pids},
                          {p: scores[p] for p in test_pids},
                          ev_test, horizon_min=params.horizon_min)),
    }
    with open(_path(workdir, "metrics"), "w") as fh:
        json.dump(result, fh, indent=1, sort_keys=True, allow_nan=True)
        fh.write("\n")

    curve = metrics.pr_curve({p: states[p] for p in test_pids},
                             {p: scores[p] for p in test_pids}, ev_test,
                             config.alarm.silencing_min, config.alarm.reset_min,
                             params)
    with open(_path(workdir, "pr_curve"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "recall", "precision", "n_alarms",
                         "n_tp", "n_fp"])
        for row in curve:
            writer.writerow([format_float(row["threshold"]),
                             format_float(row["recall"]),
                             format_float(row["precision"]),
                             row["n_alarms"], row["n_tp"], row["n_fp"]])
    logger.info("test AUROC %.4f, event recall %.4f precision %.4f",
                result["timeslice"]["auroc"], sc.recall, sc.precision)


def stage_report(config: PipelineConfig, workdir: str) -> None:
    split = _load_split(workdir, config)
    states, _, n_points, offset = _grid_meta(workdir)
    events = _events_minutes(endpoint.load_events(
        _need(workdir, "events", "annotate")))
    alarms = _load_alarm_minutes(_need(workdir, "alarms", "alarm"))
    statics = core.load_statics(_need(workdir, "statics", "synth"))
    test_pids = [p for p in split.test if p in states]
    reports.write_reports(
        os.path.join(workdir, ARTIFACTS["report_dir"]),
        {p: alarms.get(p, np.empty(0)) for p in test_pids},
        {p: events.get(p, []) for p in test_pids},
        {p: statics[p] for p in test_pids if p in statics},
        {p: offset[p] for p in test_pids},
        config.evaluate.params())
    logger.info("reports written to %s",
                os.path.join(workdir, ARTIFACTS["report_dir"]))


_STAGE_FUNCS = {
    "synth": stage_synth,
    "clean": stage_clean,
    "impute": stage_impute,
    "annotate": stage_annotate,
    "mine-shapelets": stage_mine_shapelets,
    "featurize": stage_featurize,
    "train": stage_train,
    "alarm": stage_alarm,
    "evaluate": stage_evaluate,
    "report": stage_report,
}


def run_stage(name: str, config: PipelineConfig, workdir: str) -> None:
    _STAGE_FUNCS[name](config, workdir)


def run_all(config: PipelineConfig, workdir: str) -> None:
    for name in STAGES:
        logger.info("--- stage %s ---", name)
        run_stage(name, config, workdir)
