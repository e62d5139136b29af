"""
Tests for DDS dimension and fact extraction.
"""

import shutil

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import BATCH_DATE, RUNNING_EXAMPLE, simple_config
from stagex.etl.dds import extract_dimension, extract_fact, extraction_window
from stagex.etl.errors import UnknownColumn
from stagex.etl.orchestrator import run_batch
from stagex.etl.records import SorHistoryRecord, SorStaticRecord, TxType
from stagex.etl.schema import load_config
from stagex.etl.storage import FileStore


@pytest.fixture
def loaded(example_store, example_cfg):
    run_batch(BATCH_DATE, example_cfg, example_store)
    return example_store


def test_static_dimension_since_batch(loaded):
    """Rows stamped by the batch are extracted; the deleted BK4 is not."""
    frame = extract_dimension(loaded, "T", BATCH_DATE)

    assert frame["sk"].tolist() == ["1", "2", "3", "5"]
    assert frame["data2"].tolist() == ["X", "Y", "J", "M"]
    assert (frame["ed"] == "99991231").all()
    assert (loaded.data_dir / "dds" / f"dim_T_{BATCH_DATE}.csv").exists()

    refb = extract_dimension(loaded, "RefB", BATCH_DATE)
    assert refb["sk"].tolist() == ["613"]
    assert refb["af"].tolist() == ["1"]
    print("✅ test_static_dimension_since_batch passed")


def test_scd_dimension_keeps_every_version(loaded):
    frame = extract_dimension(loaded, "T", BATCH_DATE, scd=True)

    assert list(zip(frame["sk"], frame["bd"])) == [
        ("1", "20141001"), ("1", "20141008"),
        ("2", "20141003"), ("2", "20141008"),
        ("3", "20141008"),
        ("4", "20141006"),
        ("5", "20141008"),
    ]
    assert frame.loc[frame["sk"] == "4", "last_tx_type"].tolist() == ["D"]


def test_earlier_window_picks_up_untouched_rows(loaded):
    assert extract_dimension(loaded, "RefA", BATCH_DATE, write=False).empty
    assert len(extract_dimension(loaded, "RefA", 20141001, write=False)) == 3


def test_fact_extraction_by_affected_date(loaded):
    frame = extract_fact(loaded, "T", "bd", 20141008)
    assert frame["sk"].tolist() == ["1", "2", "3", "5"]
    assert "data1" in frame.columns and "af" not in frame.columns
    assert (loaded.data_dir / "dds" / f"fact_T_{BATCH_DATE}.csv").exists()


def test_fact_incremental_keeps_closed_versions(loaded):
    """BK4's version begun 20141006 was closed by the delete and still qualifies."""
    frame = extract_fact(loaded, "T", "bd", 20141006, write=False)

    assert list(zip(frame["sk"], frame["bd"])) == [
        ("1", "20141008"), ("2", "20141008"), ("3", "20141008"), ("4", "20141006"), ("5", "20141008"),
    ]
    assert frame.loc[frame["sk"] == "4", "ed"].tolist() == ["20141007"]


def test_fact_rebuild_takes_every_version_of_affected_sks(loaded):
    rebuild = extract_fact(loaded, "T", "bd", 20141006, rebuild=True, write=False)
    assert len(rebuild) == 7
    assert set(rebuild["ed"]) == {"20141007", "99991231"}

    latest = extract_fact(loaded, "T", "bd", 20141008, rebuild=True, write=False)
    assert list(zip(latest["sk"], latest["bd"])) == [
        ("1", "20141001"), ("1", "20141008"),
        ("2", "20141003"), ("2", "20141008"),
        ("3", "20141008"),
        ("5", "20141008"),
    ]


def test_fact_earliest_bound_takes_whole_table(loaded):
    history = loaded.frame("sor", "T_history")
    for rebuild in (False, True):
        assert len(extract_fact(loaded, "T", "bd", 10000101, rebuild=rebuild, write=False)) == len(history)


def _fact_store(tmp_path):
    """Item A: closed versions from 20141001 and 20141006; item B: open version from 20141008."""
    cfg = simple_config()
    store = FileStore(tmp_path, cfg)
    store.insert_static("item", SorStaticRecord(sk=1, bk=("A",), static_attrs={"name": "a"},
                                                last_tx_type=TxType.DELETE, last_tx_date=20141008))
    store.insert_static("item", SorStaticRecord(sk=2, bk=("B",), static_attrs={"name": "b"},
                                                last_tx_type=TxType.INSERT, last_tx_date=20141008))
    store.put_history("item", SorHistoryRecord(sk=1, bk=("A",), bd=20141001, ed=20141005, dynamic_attrs={"price": "1"}))
    store.put_history("item", SorHistoryRecord(sk=1, bk=("A",), bd=20141006, ed=20141007, dynamic_attrs={"price": "2"}))
    store.put_history("item", SorHistoryRecord(sk=2, bk=("B",), bd=20141008, dynamic_attrs={"price": "3"}))
    return store


def test_fact_rows_match_brute_force_filter(tmp_path):
    store = _fact_store(tmp_path)
    history = store.history_records("item")

    incremental = extract_fact(store, "item", "bd", 20141006, write=False)
    expected = [(str(r.sk), str(r.bd)) for r in history if r.bd >= 20141006]
    assert list(zip(incremental["sk"], incremental["bd"])) == expected
    assert len(incremental) == 2

    rebuild = extract_fact(store, "item", "bd", 20141006, rebuild=True, write=False)
    assert len(rebuild) == 3
    assert rebuild["price"].tolist() == ["1", "2", "3"]


def test_fact_empty_sor(tmp_path):
    store = FileStore(tmp_path, simple_config())
    assert extract_fact(store, "item", "bd", 20141006, write=False).empty
    assert extract_fact(store, "item", "bd", 20141006, rebuild=True, write=False).empty


def test_fact_unknown_column(loaded):
    with pytest.raises(UnknownColumn):
        extract_fact(loaded, "T", "data1", 20141001)


def test_extraction_window_defaults_to_last_success(loaded):
    assert extraction_window(loaded) == BATCH_DATE
    assert extraction_window(loaded, 20141002) == 20141002


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=20140901, max_value=20141031), st.integers(min_value=0, max_value=40))
def test_dimension_window_is_monotone(shared_store, start, widen):
    """Moving the window start earlier never drops rows."""
    store = shared_store
    narrow = set(extract_dimension(store, "T", start, write=False)["sk"])
    wide = set(extract_dimension(store, "T", start - widen, write=False)["sk"])
    assert narrow <= wide


@pytest.fixture(scope="module")
def shared_store(tmp_path_factory):
    """One loaded running-example store shared by the property test."""
    data_dir = tmp_path_factory.mktemp("dds") / "data"
    shutil.copytree(RUNNING_EXAMPLE, data_dir, ignore=shutil.ignore_patterns("expected"))
    cfg = load_config(data_dir / "mapping.json")
    store = FileStore(data_dir, cfg)
    run_batch(BATCH_DATE, cfg, store)
    return store
