"""Synthetic ICU cohorts with controlled deterioration episodes.

Each patient is generated from an independent seeded stream, so cohorts
are reproducible regardless of generation order.  Deterioration episodes
follow a fixed physiology: blood pressure drifts down over hours and
crosses 65 mmHg shortly before the planned onset, lactate climbs past
2 mmol/L at the same time, vasopressors run while the episode lasts, and
everything recovers afterwards.  A second stream optionally injects
recoverable recording artefacts (range spikes, duplicates, timestamp
typos, height/weight swaps, mislabeled venous draws, trailing fragments)
without disturbing the underlying truth.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from datetime import timedelta

import numpy as np

from . import core

MIN_PER_YEAR = 365.25 * 1440.0

APACHE_GROUPS = ("cardiovascular", "gastrointestinal", "neurological",
                 "respiratory", "trauma", "other")
APACHE_WEIGHTS = (0.3, 0.15, 0.15, 0.2, 0.1, 0.1)

_CATALOG_ROWS = [
    # id, name, kind, lo, hi, default, freq, acting, group
    ("hr", "Heart rate", "continuous", 0, 300, 75, "high", None, None),
    ("map", "Mean arterial pressure", "continuous", 10, 250, 80, "high", None, None),
    ("sao2", "Arterial oxygen saturation", "continuous", 40, 100, 97, "medium", None, None),
    ("svo2", "Venous oxygen saturation", "continuous", 20, 100, 70, "medium", None, None),
    ("cvo2", "Central venous oxygen saturation", "continuous", 20, 100, 70, "medium", None, None),
    ("lac_art", "Lactate (arterial)", "continuous", 0, 30, 1.0, "medium", None, "lac"),
    ("lac_ven", "Lactate (venous)", "continuous", 0, 30, 1.0, "medium", None, "lac"),
    ("temp_core", "Core temperature", "continuous", 25, 45, 37, "medium", None, "temp"),
    ("temp_skin", "Skin temperature", "continuous", 25, 45, 36.5, "medium", None, "temp"),
    ("height", "Height", "continuous", 20, 250, 170, "low", None, None),
    ("weight", "Weight", "continuous", 1, 300, 75, "low", None, None),
    ("noise_lab", "Calibration lab", "continuous", 0, 100, 50, "low", None, None),
    ("rhythm", "Cardiac rhythm class", "categorical", 0, 4, 0, "medium", None, None),
    ("abx_a", "Antibiotic A given", "binary", 0, 1, 0, "medium", None, "abx"),
    ("abx_b", "Antibiotic B given", "binary", 0, 1, 0, "medium", None, "abx"),
    ("norepinephrine", "Norepinephrine rate", "drug", 0, 50, 0, "high", 15, None),
    ("dobutamine", "Dobutamine rate", "drug", 0, 50, 0, "high", 15, None),
]


def default_catalog() -> core.VariableCatalog:
    entries = [core.VariableEntry(
        variable_id=vid, name=name, kind=kind, range_lo=float(lo),
        range_hi=float(hi), default=float(default), freq_class=freq,
        acting_period_min=float(acting) if acting is not None else None,
        merge_group=group) for vid, name, kind, lo, hi, default, freq,
        acting, group in _CATALOG_ROWS]
    return core.VariableCatalog(entries)


@dataclass
class SynthConfig:
    n_patients: int = 200
    seed: int = 0
    start: str = "2010-01-01T00:00:00"
    span_years: float = 7.0
    event_patient_frac: float = 0.31
    artefacts: bool = True
    single_signal: str | None = None  # "map": only blood pressure drifts pre-onset
    no_map_frac: float = 0.02


@dataclass
class _EventPlan:
    onset: float
    end: float
    lead: float
    peak: float


def _interp_segment(base: float, anchors: list[tuple[float, float]],
                    t: np.ndarray, out: np.ndarray) -> None:
    xs = np.asarray([a[0] for a in anchors])
    vs = np.asarray([a[1] for a in anchors])
    mask = (t >= xs[0]) & (t <= xs[-1])
    out[mask] = np.interp(t[mask], xs, vs)


def _shaped(base_curve: np.ndarray, t: np.ndarray,
            per_event_anchors: list[list[tuple[float, float]]]) -> np.ndarray:
    out = base_curve.copy()
    for anchors in per_event_anchors:
        _interp_segment(0.0, anchors, t, out)
    return out


class _PatientGen:
    def __init__(self, index: int, config: SynthConfig):
        self.config = config
        self.rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, 11, index]))
        self.art = np.random.default_rng(
            np.random.SeedSequence([config.seed, 13, index]))
        self.pid = f"p{index:04d}"
        start = core.parse_ts(config.start)
        span_min = config.span_years * MIN_PER_YEAR
        offset = (index + self.rng.uniform()) * span_min / max(config.n_patients, 1)
        self.adm = (start + timedelta(minutes=float(offset))).replace(microsecond=0)
        self.records: list[core.RawRecord] = []

    # -- planning ----------------------------------------------------------

    def plan(self) -> tuple[float, list[_EventPlan], bool]:
        rng, cfg = self.rng, self.config
        is_event = rng.uniform() < cfg.event_patient_frac
        if is_event:
            stay = rng.uniform(18 * 60, 40 * 60)
        else:
            stay = rng.uniform(6 * 60, 30 * 60)
        events = []
        if is_event:
            n_ev = 1 + int(min(rng.poisson(0.8), 2))
            onset = rng.uniform(360, 540)
            lead = rng.uniform(330, 480)
            for _ in range(n_ev):
                dur = rng.uniform(45, 120)
                if onset + dur + 120 > stay:
                    break
                events.append(_EventPlan(
                    onset=onset, end=onset + dur, lead=lead,
                    peak=2.9 + rng.uniform(0, 0.5)))
                # the next episode's pre-onset drift must start only after
                # this one has fully recovered, or it would erase it
                lead = rng.uniform(330, 480)
                onset = onset + dur + lead + rng.uniform(95, 240)
        no_map = (not events) and rng.uniform() < cfg.no_map_frac
        return stay, events, no_map

    # -- latent curves -----------------------------------------------------

    def curves(self, events: list[_EventPlan]):
        rng, cfg = self.rng, self.config
        base_map = max(78 + rng.normal(0, 2.5), 74.0)
        amp = rng.uniform(0, 1.5)
        period = rng.uniform(600, 1440)
        phase = rng.uniform(0, 2 * math.pi)
        base_hr = 80 + rng.normal(0, 6)
        base_lac = float(np.clip(1.15 + rng.normal(0, 0.08), 0.7, 1.5))

        map_anchors, lac_anchors, hr_anchors = [], [], []
        for ev in events:
            s, e = ev.onset, ev.end
            d0 = max(s - ev.lead, 20.0)
            map_anchors.append([(d0, base_map), (s - 120, 70.0), (s - 10, 65.0),
                                (s + 10, 58.0), (e + 15, 57.0), (e + 90, base_map)])
            lac_anchors.append([(d0, base_lac), (s - 90, 1.7), (s - 12, 2.0),
                                (s + 30, ev.peak), (e, ev.peak),
                                (e + 70, 1.95), (e + 240, base_lac)])
            hr_anchors.append([(d0, base_hr), (s, base_hr + 12),
                               (e, base_hr + 15), (e + 120, base_hr)])

        def map_curve(t: np.ndarray) -> np.ndarray:
            base = base_map + amp * np.sin(2 * math.pi * t / period + phase)
            return _shaped(base, t, map_anchors)

        def lac_curve(t: np.ndarray) -> np.ndarray:
            return _shaped(np.full(t.shape, base_lac), t, lac_anchors)

        def hr_curve(t: np.ndarray) -> np.ndarray:
            return _shaped(np.full(t.shape, base_hr), t, hr_anchors)

        return map_curve, lac_curve, hr_curve

    # -- record emission ---------------------------------------------------

    def emit(self, vid: str, t_min: float, value: float,
             status: str = "plain") -> core.RawRecord:
        sample = (self.adm + timedelta(minutes=float(t_min))).replace(microsecond=0)
        enter_offset = float(self.rng.uniform(0.2, 4.0))
        if status in ("infusion", "zero"):
            enter_offset = 0.0
        enter = (sample + timedelta(minutes=enter_offset)).replace(microsecond=0)
        rec = core.RawRecord(variable_id=vid, sample_time=sample,
                             enter_time=enter, value=float(value), status=status)
        self.records.append(rec)
        return rec

    def _times(self, start: float, step: float, jitter: float,
               stop: float) -> list[float]:
        rng = self.rng
        out = []
        t = start
        while t <= stop:
            out.append(t)
            t += step + rng.uniform(-jitter, jitter)
        return out

    def generate(self) -> tuple[core.PatientStay, list[tuple]]:
        rng, cfg = self.rng, self.config
        if cfg.single_signal is not None:
            return self._generate_single_signal()
        stay, events, no_map = self.plan()
        map_curve, lac_curve, hr_curve = self.curves(events)

        death_p = 0.22 if events else 0.04
        statics = core.PatientStatics(
            patient_id=self.pid, admission_time=self.adm,
            age=int(rng.uniform(25, 89)),
            sex=str(rng.choice(["F", "M"])),
            height_cm=None,
            emergency=int(rng.uniform() < 0.45),
            surgical=int(rng.uniform() < 0.35),
            apache_group=str(rng.choice(APACHE_GROUPS, p=APACHE_WEIGHTS)),
            apache_score=None,
            mortality=int(rng.uniform() < death_p))
        height_val = float(np.clip(rng.normal(168, 9), 145, 200))
        weight_val = float(np.clip(rng.normal(78, 14), 42, 150))
        score_shift = 8 if events else 0
        score_val = int(np.clip(rng.normal(18 + score_shift, 6), 2, 45))
        if rng.uniform() >= 0.05:
            statics.height_cm = round(height_val, 1)
        if rng.uniform() >= 0.03:
            statics.apache_score = score_val

        # high-frequency vitals on a 5-minute cadence
        hr_t = np.arange(0.0, stay + 1e-9, 5.0)
        hr_v = hr_curve(hr_t) + rng.normal(0, 2.5, hr_t.size)
        for t, v in zip(hr_t, hr_v):
            self.emit("hr", t if t == 0 else t + rng.uniform(0, 0.2),
                      round(float(v), 1))
        if not no_map:
            map_t = np.arange(1.0, stay + 1e-9, 5.0)
            map_v = map_curve(map_t) + rng.normal(0, 1.0, map_t.size)
            for t, v in zip(map_t, map_v):
                self.emit("map", t + rng.uniform(0, 0.2), round(float(v), 1))

        # arterial panels: lactate + saturation, plus draws around episodes
        panel_t = self._times(rng.uniform(100, 200), 240, 25, stay)
        for ev in events:
            draws = (ev.onset - 120, ev.onset - 60, ev.onset - 10,
                     ev.onset + 45, ev.end + 30, ev.end + 150)
            for td in draws:
                if 0 < td <= stay:
                    panel_t.append(td)
        for t in sorted(panel_t):
            lac = lac_curve(np.asarray([t]))[0] + rng.normal(0, 0.03)
            self.emit("lac_art", t, round(float(max(lac, 0.3)), 2))
            self.emit("sao2", t, round(float(96.8 + rng.normal(0, 0.7)), 1))

        # venous panels
        base_cv = 68 + rng.normal(0, 2.5)
        for t in self._times(rng.uniform(250, 450), 480, 40, stay):
            cv = base_cv + rng.normal(0, 1.2)
            self.emit("cvo2", t, round(float(cv), 1))
            has_svo2 = rng.uniform() < 0.6
            sv = cv + rng.normal(0, 0.02)
            lv = lac_curve(np.asarray([t]))[0] + 0.1 + rng.normal(0, 0.03)
            if has_svo2:
                self.emit("svo2", t, round(float(sv), 1))
            self.emit("lac_ven", t, round(float(max(lv, 0.3)), 2))

        # temperatures, rhythm, antibiotics, slow lab, body measures
        for t in self._times(rng.uniform(10, 40), 60, 4, stay):
            tc = 36.9 + 0.3 * math.sin(t / 700.0) + rng.normal(0, 0.15)
            self.emit("temp_core", t, round(float(tc), 1))
            self.emit("temp_skin", t + 2, round(float(tc - 0.4 + rng.normal(0, 0.2)), 1))
        state = 0
        for t in self._times(rng.uniform(5, 30), 60, 0, stay):
            in_event = any(ev.onset <= t <= ev.end for ev in events)
            p_move = 0.3 if in_event else 0.08
            if rng.uniform() < p_move:
                state = int(rng.integers(1, 5)) if state == 0 else 0
            self.emit("rhythm", t, float(state))
        for vid, max_n in (("abx_a", 3), ("abx_b", 2)):
            for _ in range(int(rng.integers(0, max_n))):
                self.emit(vid, float(rng.uniform(0, stay)), 1.0)
        for t in self._times(rng.uniform(300, 500), 720, 0, stay):
            self.emit("noise_lab", t, round(float(50 + rng.normal(0, 6)), 1))
        t_hw = 20 + rng.uniform(0, 5)
        self.emit("height", t_hw, round(height_val + rng.normal(0, 0.5), 1))
        self.emit("weight", t_hw, round(weight_val + rng.normal(0, 0.3), 1))

        # vasoactive drugs while episodes run
        for ev in events:
            low_band = rng.uniform() < 0.5
            r0 = rng.uniform(0.04, 0.09) if low_band else rng.uniform(0.12, 0.35)
            self.emit("norepinephrine", ev.onset + 5, round(r0, 3),
                      status="infusion")
            if rng.uniform() < 0.5:
                mid = ev.onset + 5 + (ev.end - ev.onset) / 2
                self.emit("norepinephrine", mid,
                          round(r0 * rng.uniform(0.7, 1.4), 3),
                          status="infusion")
            self.emit("norepinephrine", ev.end + 15, 0.0, status="zero")
            if rng.uniform() < 0.3:
                self.emit("dobutamine", ev.onset + 10,
                          round(rng.uniform(2, 6), 2), status="infusion")
                self.emit("dobutamine", ev.end + 10, 0.0, status="zero")

        if cfg.artefacts:
            self._inject_artefacts(stay, no_map)

        stay_obj = core.PatientStay(patient_id=self.pid, statics=statics,
                                    records=self.records)
        stay_obj.sort_records()
        truth = [(self.adm + timedelta(minutes=ev.onset),
                  self.adm + timedelta(minutes=ev.end)) for ev in events]
        return stay_obj, truth

    # -- single-signal cohorts ----------------------------------------------

    # Geometry of the deterministic single-signal stay, in minutes from
    # admission.  Blood pressure drifts from 120 min on, crosses 65 mmHg
    # just before SIG_ONSET, and the stable prefix of the stay ends
    # exactly at SIG_LAST_LABEL for every deteriorating patient.  Quiet
    # stays last SIG_LAST_LABEL + 480 so their labelled window covers the
    # same grid range: the two classes then differ in nothing but the
    # signal channel -- not even in time since admission.
    SIG_ONSET = 240.0
    SIG_END = 300.0
    SIG_LAST_LABEL = 225.0

    def _generate_single_signal(self) -> tuple[core.PatientStay, list[tuple]]:
        rng, cfg = self.rng, self.config
        is_event = rng.uniform() < cfg.event_patient_frac
        s, e = self.SIG_ONSET, self.SIG_END
        stay = e + 45.0 if is_event else self.SIG_LAST_LABEL + 480.0

        statics = core.PatientStatics(
            patient_id=self.pid, admission_time=self.adm,
            age=60, sex="F", height_cm=170.0, emergency=0, surgical=0,
            apache_group="other", apache_score=20, mortality=0)

        hr_t = np.arange(0.0, stay + 1e-9, 5.0)
        for t in hr_t:
            self.emit("hr", t, 75.0)
        map_t = np.arange(1.0, stay + 1e-9, 5.0)
        if is_event:
            anchors = [(20.0, 78.0), (s - 120, 70.0), (s - 10, 65.0),
                       (s + 10, 58.0), (e + 15, 57.0), (e + 90, 78.0)]
            map_v = _shaped(np.full(map_t.shape, 78.0), map_t, [anchors])
        else:
            map_v = np.full(map_t.shape, 78.0)
        for t, v in zip(map_t, map_v):
            self.emit("map", t, round(float(v), 2))
        # one normal lactate draw just past the labelled window keeps the
        # annotation-time estimate defined over the whole stay without any
        # labelled point ever seeing a measurement; the deteriorating arm
        # then crosses the threshold inside a short, interpolable gap
        self.emit("lac_art", self.SIG_LAST_LABEL + 10, 1.2)
        if is_event:
            self.emit("lac_art", s + 15, 2.6)
            self.emit("lac_art", s + 40, 3.0)
            self.emit("lac_art", e + 20, 2.4)

        stay_obj = core.PatientStay(patient_id=self.pid, statics=statics,
                                    records=self.records)
        stay_obj.sort_records()
        truth = [(self.adm + timedelta(minutes=s),
                  self.adm + timedelta(minutes=e))] if is_event else []
        return stay_obj, truth

    # -- artefacts ---------------------------------------------------------

    def _by_var(self, vid: str) -> list[core.RawRecord]:
        return [r for r in self.records if r.variable_id == vid]

    def _inject_artefacts(self, stay: float, no_map: bool) -> None:
        art = self.art
        if art.uniform() < 0.3:
            self.emit("hr", float(art.uniform(0.2 * stay, 0.8 * stay)), 450.0)
        if not no_map and art.uniform() < 0.5:
            maps = self._by_var("map")
            if maps:
                src = maps[int(art.integers(0, len(maps)))]
                self.records.append(core.RawRecord(
                    variable_id="map", sample_time=src.sample_time,
                    enter_time=src.enter_time + timedelta(minutes=1),
                    value=src.value, status=src.status))
        if art.uniform() < 0.4:
            temps = self._by_var("temp_core")
            if temps:
                src = temps[int(art.integers(0, len(temps)))]
                self.records.append(core.RawRecord(
                    variable_id="temp_core", sample_time=src.sample_time,
                    enter_time=src.enter_time + timedelta(minutes=1),
                    value=round(src.value + float(art.uniform(-0.02, 0.02)), 3),
                    status=src.status))
        if art.uniform() < 0.2:
            hrs = self._by_var("hr")
            pool = [r for r in hrs[5:-5]
                    if r.sample_time.month not in (1, 12)
                    and not (r.sample_time.month == 2 and r.sample_time.day == 29)]
            if pool:
                rec = pool[int(art.integers(0, len(pool)))]
                rec.sample_time = rec.sample_time.replace(
                    year=rec.sample_time.year - 1)
        if not no_map and art.uniform() < 0.1:
            maps = self._by_var("map")
            pool = [r for r in maps[5:-5]
                    if r.sample_time.day <= 12
                    and abs(r.sample_time.month - r.sample_time.day) >= 2]
            if pool:
                rec = pool[int(art.integers(0, len(pool)))]
                rec.sample_time = rec.sample_time.replace(
                    month=rec.sample_time.day, day=rec.sample_time.month)
        if art.uniform() < 0.12:
            hs = self._by_var("height")
            ws = self._by_var("weight")
            if hs and ws:
                hs[0].value, ws[0].value = ws[0].value, hs[0].value
        if art.uniform() < 0.15:
            svs = self._by_var("svo2")
            if svs:
                rec = svs[int(art.integers(0, len(svs)))]
                rec.variable_id = "sao2"
                for lv in self._by_var("lac_ven"):
                    if lv.sample_time == rec.sample_time:
                        lv.variable_id = "lac_art"
                        break
        if art.uniform() < 0.1:
            tail = stay + 3 * 1440
            for dt in (0.0, 5.0):
                self.emit("hr", tail + dt, round(80 + float(art.uniform(-5, 5)), 1))


def generate_cohort(config: SynthConfig):
    """(catalog, stays, truth episodes) for a seeded synthetic cohort."""
    if config.single_signal not in (None, "map"):
        raise ValueError("single_signal supports only 'map'")
    catalog = default_catalog()
    stays: dict[str, core.PatientStay] = {}
    truth: dict[str, list[tuple]] = {}
    for i in range(config.n_patients):
        gen = _PatientGen(i, config)
        stay, ev = gen.generate()
        stays[stay.patient_id] = stay
        truth[stay.patient_id] = ev
    return catalog, stays, truth


def write_truth_events(truth: dict[str, list[tuple]], path: str) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "onset_time", "end_time"])
        for pid in sorted(truth):
            for onset, end in truth[pid]:
                writer.writerow([pid, core.format_ts(onset), core.format_ts(end)])


def load_truth_events(path: str) -> dict[str, list[tuple]]:
    import csv
    out: dict[str, list[tuple]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["patient_id"], []).append(
                (core.parse_ts(row["onset_time"]), core.parse_ts(row["end_time"])))
    return out


def write_cohort(catalog: core.VariableCatalog, stays: dict[str, core.PatientStay],
                 truth: dict[str, list[tuple]], outdir: str) -> None:
    os.makedirs(outdir, exist_ok=True)
    ordered = [stays[pid] for pid in sorted(stays)]
    core.write_catalog(list(catalog), os.path.join(outdir, "catalog.csv"))
    core.write_records(ordered, os.path.join(outdir, "records.csv"))
    core.write_statics([s.statics for s in ordered],
                       os.path.join(outdir, "statics.csv"))
    write_truth_events(truth, os.path.join(outdir, "truth_events.csv"))
