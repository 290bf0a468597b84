"""Catalog, record and statics plumbing."""

from __future__ import annotations

import logging
from datetime import datetime, timedelta

import numpy as np
import pytest

from circews.core import (DataError, PatientStatics, PatientStay, RawRecord,
                          VariableCatalog, VariableEntry, load_catalog,
                          load_records, load_statics, write_catalog,
                          write_records, write_statics)

ADM = datetime(2015, 6, 1, 8, 0)

CATALOG_HEADER = ("variable_id,name,kind,range_lo,range_hi,default,"
                  "freq_class,acting_period_min,merge_group,merge_weight\n")
RECORD_HEADER = "patient_id,variable_id,sample_time,enter_time,value,status\n"
STATICS_HEADER = ("patient_id,admission_time,age,sex,height_cm,emergency,"
                  "surgical,apache_group,apache_score,mortality\n")


def _statics(pid: str = "p0") -> PatientStatics:
    return PatientStatics(patient_id=pid, admission_time=ADM, age=61.0,
                          sex="F", height_cm=168.0, emergency=1, surgical=0,
                          apache_group="cardiovascular", apache_score=19.0,
                          mortality=0)


def test_catalog_row_parses_range_and_default(tmp_path):
    path = tmp_path / "catalog.csv"
    path.write_text(CATALOG_HEADER + "hr,Heart rate,continuous,0,300,75,high,,,\n")
    catalog = load_catalog(str(path))
    entry = catalog.get("hr")
    assert entry.kind == "continuous"
    assert (entry.range_lo, entry.range_hi) == (0.0, 300.0)
    assert entry.default == 75.0
    assert entry.freq_class == "high"
    assert entry.acting_period_min is None
    assert entry.merge_group is None


def test_inverted_range_is_rejected_by_name(tmp_path):
    path = tmp_path / "catalog.csv"
    path.write_text(CATALOG_HEADER + "spo2,Oxygen sat,continuous,100,50,97,high,,,\n")
    with pytest.raises(DataError, match="spo2"):
        load_catalog(str(path))


def test_drug_without_acting_period_is_rejected():
    entry = VariableEntry(variable_id="nore", name="Norepinephrine", kind="drug",
                          range_lo=0.0, range_hi=10.0, default=0.0,
                          freq_class="high", acting_period_min=None,
                          merge_group=None, merge_weight=None)
    with pytest.raises(DataError, match="acting period"):
        VariableCatalog([entry])


def test_merge_weight_without_group_is_rejected():
    entry = VariableEntry(variable_id="x", name="X", kind="continuous",
                          range_lo=None, range_hi=None, default=0.0,
                          freq_class="medium", acting_period_min=None,
                          merge_group=None, merge_weight=2.0)
    with pytest.raises(DataError, match="merge weight"):
        VariableCatalog([entry])


def test_duplicate_variable_id_is_rejected():
    mk = lambda: VariableEntry(variable_id="hr", name="HR", kind="continuous",
                               range_lo=None, range_hi=None, default=0.0,
                               freq_class="high", acting_period_min=None,
                               merge_group=None, merge_weight=None)
    with pytest.raises(DataError, match="duplicate"):
        VariableCatalog([mk(), mk()])


def test_merge_group_mixing_kinds_is_rejected():
    a = VariableEntry("t1", "T1", "continuous", None, None, 0.0, "medium",
                      None, "temp", None)
    b = VariableEntry("t2", "T2", "drug", None, None, 0.0, "medium",
                      240.0, "temp", None)
    with pytest.raises(DataError, match="temp"):
        VariableCatalog([a, b])


def test_merge_target_is_synthesized():
    a = VariableEntry("t1", "T1", "continuous", 30.0, 43.0, 37.0, "medium",
                      None, "temp", None)
    catalog = VariableCatalog([a])
    target = catalog.get("temp")
    assert target.merge_group is None
    assert (target.range_lo, target.range_hi) == (30.0, 43.0)


def _write_inputs(tmp_path, record_rows: list[str]):
    cat = tmp_path / "catalog.csv"
    cat.write_text(CATALOG_HEADER + "hr,Heart rate,continuous,0,300,75,high,,,\n")
    st = tmp_path / "statics.csv"
    st.write_text(STATICS_HEADER
                  + "p0,2015-06-01T08:00:00,61,F,168,1,0,cardiovascular,19,0\n")
    rec = tmp_path / "records.csv"
    rec.write_text(RECORD_HEADER + "".join(record_rows))
    return str(rec), str(st), load_catalog(str(cat))


def test_out_of_order_records_come_back_sorted(tmp_path):
    rows = [
        "p0,hr,2015-06-01T10:00:00,2015-06-01T10:00:00,82,plain\n",
        "p0,hr,2015-06-01T08:00:00,2015-06-01T08:00:00,80,plain\n",
        "p0,hr,2015-06-01T09:00:00,2015-06-01T09:00:00,81,plain\n",
    ]
    rec, st, catalog = _write_inputs(tmp_path, rows)
    stays = load_records(rec, st, catalog)
    values = [r.value for r in stays["p0"].records]
    assert values == [80.0, 81.0, 82.0]


def test_uncatalogued_variable_is_dropped_with_count(tmp_path, caplog):
    rows = [
        "p0,hr,2015-06-01T08:00:00,2015-06-01T08:00:00,80,plain\n",
        "p0,unknown_thing,2015-06-01T08:05:00,2015-06-01T08:05:00,1,plain\n",
    ]
    rec, st, catalog = _write_inputs(tmp_path, rows)
    with caplog.at_level(logging.WARNING):
        stays = load_records(rec, st, catalog)
    assert len(stays["p0"].records) == 1
    assert "unknown_thing" in caplog.text
    assert "1 records" in caplog.text


def test_duplicate_rows_survive_loading(tmp_path):
    row = "p0,hr,2015-06-01T08:00:00,2015-06-01T08:00:00,80,plain\n"
    rec, st, catalog = _write_inputs(tmp_path, [row, row])
    stays = load_records(rec, st, catalog)
    assert len(stays["p0"].records) == 2


def test_record_for_unknown_patient_is_an_error(tmp_path):
    rows = ["p9,hr,2015-06-01T08:00:00,2015-06-01T08:00:00,80,plain\n"]
    rec, st, catalog = _write_inputs(tmp_path, rows)
    with pytest.raises(DataError, match="p9"):
        load_records(rec, st, catalog)


def test_records_round_trip_is_byte_identical(tmp_path):
    rng = np.random.default_rng(2031)
    stays = []
    for k in range(4):
        stay = PatientStay(patient_id=f"p{k}", statics=_statics(f"p{k}"))
        start = datetime(2015, 6, 1 + k, 8, 0)
        for _ in range(30):
            offset = timedelta(minutes=int(rng.integers(0, 5000)))
            stay.records.append(RawRecord(
                variable_id="hr", sample_time=start + offset,
                enter_time=start + offset,
                value=float(np.round(rng.normal(80, 9), 3)), status="plain"))
        stay.sort_records()
        stays.append(stay)

    first = tmp_path / "a.csv"
    second = tmp_path / "b.csv"
    statics_a = tmp_path / "sa.csv"
    write_records(stays, str(first))
    write_statics([s.statics for s in stays], str(statics_a))

    cat = tmp_path / "catalog.csv"
    cat.write_text(CATALOG_HEADER + "hr,Heart rate,continuous,0,300,75,high,,,\n")
    loaded = load_records(str(first), str(statics_a), load_catalog(str(cat)))
    write_records([loaded[p] for p in sorted(loaded)], str(second))
    assert first.read_bytes() == second.read_bytes()

    statics_b = tmp_path / "sb.csv"
    write_statics([loaded[p].statics for p in sorted(loaded)], str(statics_b))
    assert statics_a.read_bytes() == statics_b.read_bytes()


def test_catalog_round_trip_preserves_entries(tmp_path):
    entries = [
        VariableEntry("hr", "Heart rate", "continuous", 0.0, 300.0, 75.0,
                      "high", None, None, None),
        VariableEntry("nore", "Norepinephrine", "drug", 0.0, 10.0, 0.0,
                      "high", 20.0, None, None),
    ]
    p1 = tmp_path / "c1.csv"
    p2 = tmp_path / "c2.csv"
    write_catalog(entries, str(p1))
    loaded = load_catalog(str(p1))
    write_catalog(list(loaded), str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_loader_conserves_record_multiplicity(tmp_path, caplog):
    """records in == records dropped + records distributed over stays"""
    rng = np.random.default_rng(77)
    vids = ["hr", "mystery", "hr", "hr", "mystery"]
    rows = []
    n_in = 0
    for trial in range(50):
        vid = vids[int(rng.integers(0, len(vids)))]
        rows.append(f"p0,{vid},2015-06-01T08:{trial:02d}:00,"
                    f"2015-06-01T08:{trial:02d}:00,{80 + trial},plain\n")
        n_in += 1
    rec, st, catalog = _write_inputs(tmp_path, rows)
    with caplog.at_level(logging.WARNING):
        stays = load_records(rec, st, catalog)
    n_out = sum(len(s.records) for s in stays.values())
    n_dropped = sum(1 for r in rows if ",mystery," in r)
    assert n_in == n_out + n_dropped


def test_statics_loader_round_trips_optional_fields(tmp_path):
    path = tmp_path / "statics.csv"
    path.write_text(STATICS_HEADER + "p0,2015-06-01T08:00:00,,,,,,,,\n")
    loaded = load_statics(str(path))
    st = loaded["p0"]
    assert st.age is None and st.height_cm is None
    assert st.apache_group is None and st.mortality is None
