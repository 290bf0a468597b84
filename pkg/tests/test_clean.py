"""Cleaning rules: timestamp repair, artefact removal, duplicate collapse,
unit repairs, dose-to-rate conversion and merge-group consolidation."""

from __future__ import annotations

from datetime import datetime, timedelta

import numpy as np
import pytest

from circews import synth
from circews.clean import (CleanConfig, GlobalStats, clean_cohort,
                           clean_stay_structural, merge_variables,
                           pharma_to_rates, relabel_venous_samples,
                           remove_range_artefacts, repair_timestamps,
                           resolve_duplicates, swap_height_weight)
from circews.core import (PatientStatics, PatientStay, RawRecord,
                          VariableCatalog, VariableEntry)

T0 = datetime(2014, 5, 10, 12, 0)


def entry(vid, kind="continuous", lo=None, hi=None, default=0.0,
          freq="medium", acting=None, group=None, weight=None):
    return VariableEntry(variable_id=vid, name=vid.upper(), kind=kind,
                         range_lo=lo, range_hi=hi, default=default,
                         freq_class=freq, acting_period_min=acting,
                         merge_group=group, merge_weight=weight)


def stay_with(records, pid="p0", admission=T0):
    statics = PatientStatics(patient_id=pid, admission_time=admission,
                             age=60.0, sex="M", height_cm=175.0, emergency=0,
                             surgical=0, apache_group="other",
                             apache_score=12.0, mortality=0)
    st = PatientStay(patient_id=pid, statics=statics, records=list(records))
    st.sort_records()
    return st


def rec(vid, sample, value, enter=None, status="plain"):
    return RawRecord(variable_id=vid, sample_time=sample,
                     enter_time=sample if enter is None else enter,
                     value=value, status=status)


# ---------------------------------------------------------------------------
# Timestamp repair
# ---------------------------------------------------------------------------

def test_wrong_year_is_set_from_entry_time():
    bad = rec("hr", datetime(2013, 5, 10, 12, 0), 80.0,
              enter=datetime(2014, 5, 10, 12, 0))
    stay = stay_with([bad])
    audit = []
    repair_timestamps(stay, CleanConfig(), audit)
    assert stay.records[0].sample_time == datetime(2014, 5, 10, 12, 0)
    assert [(a.action, a.rule_id) for a in audit] == [("repair-timestamp", "ts-year")]


def test_transposed_month_and_day_are_swapped_back():
    bad = rec("hr", datetime(2014, 3, 12, 9, 30), 80.0,
              enter=datetime(2014, 12, 3, 9, 30))
    stay = stay_with([bad])
    audit = []
    repair_timestamps(stay, CleanConfig(), audit)
    assert stay.records[0].sample_time == datetime(2014, 12, 3, 9, 30)
    assert audit[0].rule_id == "ts-swap-md"


def test_swapped_digit_between_month_and_day():
    # month 10 / day 21 should have been month 12 / day 01
    bad = rec("hr", datetime(2014, 10, 21, 7, 0), 80.0,
              enter=datetime(2014, 12, 1, 7, 0))
    stay = stay_with([bad])
    audit = []
    repair_timestamps(stay, CleanConfig(), audit)
    assert stay.records[0].sample_time == datetime(2014, 12, 1, 7, 0)
    assert audit[0].rule_id == "ts-swap-digit"


def test_day_off_by_twenty_is_corrected():
    bad = rec("hr", datetime(2014, 6, 25, 7, 0), 80.0,
              enter=datetime(2014, 6, 5, 7, 0))
    stay = stay_with([bad])
    audit = []
    repair_timestamps(stay, CleanConfig(), audit)
    assert stay.records[0].sample_time == datetime(2014, 6, 5, 7, 0)
    assert audit[0].rule_id == "ts-day"


def test_unrepairable_timestamp_is_deleted():
    bad = rec("hr", datetime(2014, 9, 20, 7, 0), 80.0,
              enter=datetime(2014, 3, 5, 7, 0))
    stay = stay_with([bad])
    audit = []
    repair_timestamps(stay, CleanConfig(), audit)
    assert stay.records == []
    assert [(a.action, a.rule_id) for a in audit] == \
        [("delete-timestamp", "ts-unrepairable")]


def test_small_trailing_segment_is_deleted():
    recs = [rec("hr", T0 + timedelta(minutes=i), 80.0) for i in range(97)]
    recs += [rec("hr", T0 + timedelta(days=40, minutes=i), 81.0) for i in range(3)]
    stay = stay_with(recs)
    audit = []
    repair_timestamps(stay, CleanConfig(), audit)
    assert len(stay.records) == 97
    assert all(r.value == 80.0 for r in stay.records)
    trailing = [a for a in audit if a.rule_id == "ts-delete-after"]
    assert len(trailing) == 3


def test_small_leading_segment_is_deleted():
    recs = [rec("hr", T0 - timedelta(days=30) + timedelta(minutes=i), 70.0)
            for i in range(5)]
    recs += [rec("hr", T0 + timedelta(minutes=i), 80.0) for i in range(95)]
    stay = stay_with(recs)
    audit = []
    repair_timestamps(stay, CleanConfig(), audit)
    assert len(stay.records) == 95
    assert {a.rule_id for a in audit} == {"ts-delete-before"}


# ---------------------------------------------------------------------------
# Range and duplicates
# ---------------------------------------------------------------------------

def test_out_of_range_value_is_deleted():
    catalog = VariableCatalog([entry("hr", lo=0.0, hi=300.0)])
    stay = stay_with([rec("hr", T0, 450.0), rec("hr", T0 + timedelta(minutes=5), 82.0)])
    audit = []
    remove_range_artefacts(stay, catalog, audit)
    assert [r.value for r in stay.records] == [82.0]
    assert [(a.action, a.rule_id) for a in audit] == [("delete-range", "range")]


def test_boundary_range_values_survive():
    catalog = VariableCatalog([entry("hr", lo=0.0, hi=300.0)])
    stay = stay_with([rec("hr", T0, 0.0), rec("hr", T0 + timedelta(minutes=5), 300.0)])
    audit = []
    remove_range_artefacts(stay, catalog, audit)
    assert len(stay.records) == 2 and audit == []


def test_close_duplicates_keep_the_mean():
    catalog = VariableCatalog([entry("hr")])
    stats = GlobalStats(std={"hr": 10.0})
    stay = stay_with([rec("hr", T0, 5.0), rec("hr", T0, 5.1)])
    audit = []
    resolve_duplicates(stay, catalog, stats, audit)
    assert len(stay.records) == 1
    assert stay.records[0].value == pytest.approx(5.05, abs=1e-12)
    assert audit[0].action == "dedupe-mean"


def test_identical_duplicates_keep_one_copy():
    catalog = VariableCatalog([entry("hr")])
    stay = stay_with([rec("hr", T0, 81.0), rec("hr", T0, 81.0), rec("hr", T0, 81.0)])
    audit = []
    resolve_duplicates(stay, catalog, GlobalStats(std={"hr": 10.0}), audit)
    assert [r.value for r in stay.records] == [81.0]
    assert [a.action for a in audit] == ["dedupe-identical"] * 2


def test_conflicting_duplicates_are_deleted():
    catalog = VariableCatalog([entry("hr")])
    stay = stay_with([rec("hr", T0, 60.0), rec("hr", T0, 120.0)])
    audit = []
    resolve_duplicates(stay, catalog, GlobalStats(std={"hr": 10.0}), audit)
    assert stay.records == []
    assert [a.action for a in audit] == ["dedupe-conflict"] * 2


def test_zero_status_drug_duplicate_is_dropped():
    catalog = VariableCatalog([entry("nore", kind="drug", acting=20.0)])
    stay = stay_with([rec("nore", T0, 5.0, status="zero"),
                      rec("nore", T0, 2.0, status="infusion")])
    audit = []
    resolve_duplicates(stay, catalog, GlobalStats(), audit)
    assert [(r.value, r.status) for r in stay.records] == [(2.0, "infusion")]
    assert [a.action for a in audit] == ["dedupe-zero"]


def test_duplicate_boluses_are_summed():
    catalog = VariableCatalog([entry("mo", kind="drug", acting=240.0)])
    stay = stay_with([rec("mo", T0, 2.0, status="bolus"),
                      rec("mo", T0, 3.0, status="bolus")])
    audit = []
    resolve_duplicates(stay, catalog, GlobalStats(), audit)
    assert [r.value for r in stay.records] == [5.0]


# ---------------------------------------------------------------------------
# Height/weight and venous relabeling
# ---------------------------------------------------------------------------

def test_impossible_bmi_swaps_height_and_weight():
    stay = stay_with([rec("height", T0, 75.0), rec("weight", T0 + timedelta(minutes=2), 180.0)])
    audit = []
    swap_height_weight(stay, CleanConfig(), audit)
    by_vid = {r.variable_id: r.value for r in stay.records}
    assert by_vid == {"height": 180.0, "weight": 75.0}
    assert [a.action for a in audit] == ["repair-bmi-swap"] * 2


def test_plausible_bmi_is_left_alone():
    stay = stay_with([rec("height", T0, 180.0), rec("weight", T0, 75.0)])
    audit = []
    swap_height_weight(stay, CleanConfig(), audit)
    by_vid = {r.variable_id: r.value for r in stay.records}
    assert by_vid == {"height": 180.0, "weight": 75.0} and audit == []


def test_arterial_lactate_near_venous_saturation_is_relabeled():
    config = CleanConfig()
    stats = GlobalStats(std={"sao2": 4.0})
    recs = [
        rec("sao2", T0, 71.0),                              # venous-looking
        rec("cvo2", T0 + timedelta(minutes=10), 71.2),
        rec("lac_art", T0, 2.4),
        rec("sao2", T0 + timedelta(hours=6), 97.0),         # clearly arterial
    ]
    stay = stay_with(recs)
    audit = []
    relabel_venous_samples(stay, config, stats, audit)
    relabeled = {(r.variable_id, r.sample_time) for r in stay.records}
    assert ("svo2", T0) in relabeled
    assert ("lac_ven", T0) in relabeled
    assert ("sao2", T0 + timedelta(hours=6)) in relabeled
    assert all(a.action == "relabel-venous" for a in audit) and len(audit) == 2


# ---------------------------------------------------------------------------
# Dose-to-rate conversion
# ---------------------------------------------------------------------------

def test_bolus_spreads_over_acting_period():
    catalog = VariableCatalog([entry("mo", kind="drug", acting=240.0)])
    stay = stay_with([rec("mo", T0, 100.0, status="bolus")])
    audit = []
    pharma_to_rates(stay, catalog, audit)
    assert [(r.sample_time, r.value) for r in stay.records] == [
        (T0, 100.0 / 240.0),
        (T0 + timedelta(minutes=240), 0.0),
    ]
    assert stay.records[0].value == pytest.approx(0.41667, abs=5e-6)
    assert all(r.status == "infusion" for r in stay.records)
    assert [a.action for a in audit] == ["pharma-rate"]


def test_overlapping_bolus_and_infusion_rates_add():
    catalog = VariableCatalog([entry("mo", kind="drug", acting=240.0)])
    stay = stay_with([
        rec("mo", T0, 100.0, status="bolus"),
        rec("mo", T0 + timedelta(minutes=60), 2.0, status="infusion"),
    ])
    pharma_to_rates(stay, catalog, [])
    assert [(r.sample_time, r.value) for r in stay.records] == [
        (T0, 100.0 / 240.0),
        (T0 + timedelta(minutes=60), 2.0 + 100.0 / 240.0),
        (T0 + timedelta(minutes=240), 2.0),
    ]


def test_zero_status_terminates_an_infusion():
    catalog = VariableCatalog([entry("nore", kind="drug", acting=20.0)])
    stay = stay_with([
        rec("nore", T0, 0.3, status="infusion"),
        rec("nore", T0 + timedelta(minutes=90), 0.0, status="zero"),
    ])
    pharma_to_rates(stay, catalog, [])
    assert [(r.sample_time, r.value) for r in stay.records] == [
        (T0, 0.3),
        (T0 + timedelta(minutes=90), 0.0),
    ]


def test_dose_mass_is_conserved():
    rng = np.random.default_rng(515)
    catalog = VariableCatalog([entry("mo", kind="drug", acting=240.0)])
    for _ in range(25):
        recs = []
        for _ in range(int(rng.integers(1, 6))):
            t = T0 + timedelta(minutes=float(rng.integers(0, 600)))
            recs.append(rec("mo", t, float(rng.uniform(10, 200)), status="bolus"))
        total_dose = sum(r.value for r in recs)
        stay = stay_with(recs)
        pharma_to_rates(stay, catalog, [])
        # integrate the emitted step function; it returns to (fp-)zero
        pts = stay.records
        assert pts[-1].value == pytest.approx(0.0, abs=1e-9)
        integral = 0.0
        for a, b in zip(pts, pts[1:]):
            dt = (b.sample_time - a.sample_time).total_seconds() / 60.0
            integral += a.value * dt
        assert integral == pytest.approx(total_dose, rel=1e-9)


# ---------------------------------------------------------------------------
# Merge groups
# ---------------------------------------------------------------------------

def test_simultaneous_temperatures_merge_to_median():
    catalog = VariableCatalog([
        entry("tempc1", group="temp"),
        entry("tempc2", group="temp"),
    ])
    stay = stay_with([rec("tempc1", T0, 36.8), rec("tempc2", T0 + timedelta(minutes=2), 37.0)])
    audit = []
    merge_variables(stay, catalog, audit)
    assert [(r.variable_id, r.value) for r in stay.records] == [("temp", 36.9)]
    assert any(a.action == "merge" for a in audit)


def test_weighted_drug_rates_merge_to_scaled_sum():
    catalog = VariableCatalog([
        entry("drug_a", kind="drug", acting=20.0, group="pressor", weight=1.0),
        entry("drug_b", kind="drug", acting=20.0, group="pressor", weight=0.5),
    ])
    stay = stay_with([
        rec("drug_a", T0, 2.0, status="infusion"),
        rec("drug_b", T0, 4.0, status="infusion"),
    ])
    merge_variables(stay, catalog, [])
    assert [(r.variable_id, r.value) for r in stay.records] == [("pressor", 4.0)]


def test_binary_group_emits_presence():
    catalog = VariableCatalog([
        entry("abx1", kind="binary", group="abxany"),
        entry("abx2", kind="binary", group="abxany"),
    ])
    stay = stay_with([rec("abx1", T0, 1.0), rec("abx2", T0, 1.0)])
    merge_variables(stay, catalog, [])
    assert [(r.variable_id, r.value) for r in stay.records] == [("abxany", 1.0)]


def test_count_suffix_group_emits_active_member_count():
    catalog = VariableCatalog([
        entry("abx1", kind="binary", group="abxn#count"),
        entry("abx2", kind="binary", group="abxn#count"),
    ])
    stay = stay_with([rec("abx1", T0, 1.0), rec("abx2", T0, 1.0)])
    merge_variables(stay, catalog, [])
    assert [(r.variable_id, r.value) for r in stay.records] == [("abxn", 2.0)]


# ---------------------------------------------------------------------------
# Whole-pass properties
# ---------------------------------------------------------------------------

def _records_key(stay):
    return [(r.variable_id, r.sample_time, r.enter_time, r.value, r.status)
            for r in stay.records]


def test_cleaning_is_idempotent_on_synthetic_cohorts():
    config = synth.SynthConfig(n_patients=8, seed=21, artefacts=True)
    catalog, stays, _ = synth.generate_cohort(config)
    clean_cohort(stays, catalog, CleanConfig())
    once = {pid: _records_key(stay) for pid, stay in stays.items()}

    stats2, audit2 = clean_cohort(stays, catalog, CleanConfig())
    twice = {pid: _records_key(stay) for pid, stay in stays.items()}
    assert once == twice
    destructive = [a for a in audit2 if a.action.startswith(("delete", "dedupe"))]
    assert destructive == []


def test_structural_pass_conserves_record_counts():
    rng = np.random.default_rng(909)
    catalog = VariableCatalog([entry("hr", lo=0.0, hi=300.0, freq="high")])
    for trial in range(20):
        recs = []
        for i in range(int(rng.integers(5, 60))):
            t = T0 + timedelta(minutes=float(rng.integers(0, 2000)))
            if rng.random() < 0.1:
                t += timedelta(days=float(rng.integers(2, 50)))
            value = float(rng.uniform(-50, 400))
            recs.append(rec("hr", t, value))
        stay = stay_with(recs)
        n_in = len(stay.records)
        audit = []
        clean_stay_structural(stay, catalog, CleanConfig(), audit)
        n_deleted = sum(1 for a in audit if a.action.startswith("delete"))
        assert n_in == len(stay.records) + n_deleted


def test_dedupe_pass_conserves_record_counts():
    rng = np.random.default_rng(910)
    catalog = VariableCatalog([entry("hr")])
    stats = GlobalStats(std={"hr": 10.0})
    for trial in range(20):
        recs = []
        for i in range(int(rng.integers(2, 8))):
            t = T0 + timedelta(minutes=5 * int(rng.integers(0, 4)))
            recs.append(rec("hr", t, float(rng.choice([80.0, 80.1, 200.0]))))
        stay = stay_with(recs)
        n_in = len(stay.records)
        audit = []
        resolve_duplicates(stay, catalog, stats, audit)
        assert n_in == len(stay.records) + len(audit)
