"""
Tests for loading SSA Lv2 into the SOR static and history tables.
"""

import pytest

from conftest import BATCH_DATE, expected_file, simple_config
from stagex.config import OPEN_END_DATE
from stagex.etl.errors import HistoryRowNotFound
from stagex.etl.extractor import ingest_all
from stagex.etl.keyvalidator import validate_keys_table
from stagex.etl.loader import load_order, load_record, load_table
from stagex.etl.records import OperationCode, SorHistoryRecord, SorStaticRecord, StagingRecord, TxType
from stagex.etl.storage import FileStore
from stagex.etl.transformer import transform_table


def _stage_running_example(store, cfg):
    ingest_all(cfg, BATCH_DATE, store)
    for phase in (lambda t: transform_table(t, BATCH_DATE, store), lambda t: validate_keys_table(t, store)):
        for target in cfg.targets:
            phase(target)


def _seeded_item_store(tmp_path):
    """Item A: static name=old, one open version since 20140101 with price 1."""
    cfg = simple_config(fk=True)
    store = FileStore(tmp_path, cfg)
    store.insert_static("item", SorStaticRecord(sk=1, bk=("A",), static_attrs={"name": "old"},
                                                last_tx_type=TxType.INSERT, last_tx_date=20140101))
    store.put_history("item", SorHistoryRecord(sk=1, bk=("A",), bd=20140101, dynamic_attrs={"price": "1"},
                                               resolved_keys={"brand": 500}))
    store.insert_static("brand", SorStaticRecord(sk=500, bk=("ACME",), last_tx_type=TxType.INSERT,
                                                 last_tx_date=20140101))
    return cfg, store


def test_running_example_load_matches_expected_files(example_store, example_cfg):
    """Loading the staged running example produces the expected SOR bytes."""
    _stage_running_example(example_store, example_cfg)
    stats = {t.target_name: load_table(t, example_store, BATCH_DATE) for t in example_cfg.targets}
    example_store.flush()

    sor = example_store.data_dir / "sor"
    for name in ("T_static.csv", "T_history.csv", "RefB_static.csv"):
        assert (sor / name).read_text() == expected_file("sor", name), name
    assert stats["T"].op_counts == {"B": 1, "DA": 1, "E": 1, "EB": 2}
    assert stats["RefB"].op_counts == {"A": 1}
    assert stats["RefA"].rows_loaded == 0
    print("✅ test_running_example_load_matches_expected_files passed")


def test_lv2_is_archived_per_batch(example_store, example_cfg):
    _stage_running_example(example_store, example_cfg)
    example_store.flush()
    stats = load_table(example_cfg.target("T"), example_store, BATCH_DATE)

    archive = example_store.data_dir / "ssa2" / "archive" / str(BATCH_DATE) / "T.csv"
    assert stats.archive == str(archive)
    assert archive.read_text() == expected_file("ssa2", "T.csv")


def test_end_begin_carries_forward_unsupplied_values(tmp_path):
    cfg, store = _seeded_item_store(tmp_path)
    rec = StagingRecord(op=OperationCode.END_BEGIN, sk=1, bk=("A",), sor_bd=20140101, ed=20140104,
                        new_bd=20140105, data={"name": "new"})

    load_record(rec, cfg.target("item"), store, 20140105)

    static = store.static_by_sk("item", 1)
    assert static.static_attrs == {"name": "new"}
    assert (static.last_tx_type, static.last_tx_date) == (TxType.UPDATE, 20140105)
    versions = store.history_records("item", 1)
    assert [(v.bd, v.ed) for v in versions] == [(20140101, 20140104), (20140105, OPEN_END_DATE)]
    assert versions[1].dynamic_attrs == {"price": "1"}
    assert versions[1].resolved_keys == {"brand": 500}


def test_end_closes_open_version(tmp_path):
    cfg, store = _seeded_item_store(tmp_path)
    rec = StagingRecord(op=OperationCode.END, sk=1, bk=("A",), sor_bd=20140101, ed=20140104)

    load_record(rec, cfg.target("item"), store, 20140105)

    assert store.open_version("item", 1) is None
    assert store.history_records("item", 1)[0].ed == 20140104
    static = store.static_by_sk("item", 1)
    assert (static.last_tx_type, static.static_attrs) == (TxType.DELETE, {"name": "old"})


def test_end_on_missing_version(tmp_path):
    cfg, store = _seeded_item_store(tmp_path)
    rec = StagingRecord(op=OperationCode.END, sk=1, bk=("A",), sor_bd=20131201, ed=20140104)

    with pytest.raises(HistoryRowNotFound):
        load_record(rec, cfg.target("item"), store, 20140105)


def test_reactivation_opens_version_with_supplied_values_only(tmp_path):
    cfg, store = _seeded_item_store(tmp_path)
    store.put_history("item", SorHistoryRecord(sk=1, bk=("A",), bd=20140101, ed=20140102,
                                               dynamic_attrs={"price": "1"}, resolved_keys={"brand": 500}))
    rec = StagingRecord(op=OperationCode.DEACTIVATE_AUGMENT, sk=1, bk=("A",), new_bd=20140105,
                        fk_values={"brand": "ACME"}, resolved_keys={"brand": 500})

    load_record(rec, cfg.target("item"), store, 20140105)

    current = store.open_version("item", 1)
    assert current.bd == 20140105
    assert current.dynamic_attrs == {}
    static = store.static_by_sk("item", 1)
    assert (static.af, static.last_tx_type) == (False, TxType.INSERT)


def test_augment_load_writes_blank_static_row(tmp_path):
    cfg, store = _seeded_item_store(tmp_path)
    load_record(StagingRecord(op=OperationCode.AUGMENT, sk=501, bk=("NEW",), af=True),
                cfg.target("brand"), store, 20140105)

    row = store.static_by_sk("brand", 501)
    assert (row.af, row.static_attrs, row.last_tx_type) == (True, {}, None)
    assert store.history_records("brand", 501) == []


def test_load_order_puts_augments_first():
    recs = [
        StagingRecord(op=OperationCode.BEGIN, sk=3, bk=("B",), new_bd=1),
        StagingRecord(op=OperationCode.AUGMENT, sk=9, bk=("Z",), af=True),
        StagingRecord(op=OperationCode.BEGIN, sk=1, bk=("A",), new_bd=1),
    ]
    assert [r.bk for r in load_order(recs)] == [("Z",), ("A",), ("B",)]


def test_failed_load_restores_table(tmp_path):
    cfg, store = _seeded_item_store(tmp_path)
    store.upsert_lv2("item", StagingRecord(op=OperationCode.BEGIN, sk=2, bk=("B",), new_bd=20140105,
                                           data={"name": "b"}, resolved_keys={"brand": 500}))
    store.upsert_lv2("item", StagingRecord(op=OperationCode.END, sk=1, bk=("A",), sor_bd=20131201, ed=20140104))

    with pytest.raises(HistoryRowNotFound):
        load_table(cfg.target("item"), store, 20140105)

    assert store.static_by_sk("item", 2) is None
    assert store.lookup_sor_static_by_bk("item", ("A",)).last_tx_type is TxType.INSERT
